from .batching import (
    BatchSource,
    Sample,
    TrainingCorpus,
    alternate_batches,
    build_samples,
    collate,
)
from .stages import (
    STAGE_LEVEL,
    STAGES,
    NumericError,
    StageConfig,
    StageResult,
    cosine_lr,
    make_optimizer,
    regenerate_inputs,
    run_stage,
)
from .curriculum import (
    CurriculumPlan,
    CurriculumResult,
    StageReport,
    build_stage_sources,
    default_plan,
    evaluate_stage,
    generate_eval_records,
    run_curriculum,
)
from .ablations import (
    ALIGNMENT_ARMS,
    CURRICULUM_ARMS,
    MODALITY_ARMS,
    AblationTable,
    ArmRun,
    ablate_alignment,
    ablate_curriculum,
    ablate_modality,
    ablate_teacher,
    branch_parameter_names,
)

__all__ = [name for name in dir() if not name.startswith("_")]
