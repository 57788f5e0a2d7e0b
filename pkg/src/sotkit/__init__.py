"""Scene-graph reasoning toolkit.

Executes GQA-style operation programs over scene-graph annotations to
generate, validate, filter, and score grounded subtask rationales (SoTs):
step-by-step reasoning traces pairing each operation with its intermediate
result, including normalized object bounding boxes.
"""

from .interpreter import (
    AttributeV,
    BooleanV,
    ChoiceV,
    ExecConfig,
    ExecutionError,
    NONE,
    NoneV,
    ObjectEntry,
    ObjectList,
    PositionRule,
    SceneRefV,
    SoTTrace,
    Step,
    execute,
)
from .lexicon import load_lexicon
from .llm_gen import (
    ClientError,
    FormatError,
    GenClient,
    GenClientConfig,
    PromptTemplate,
    TemplateError,
    build_prompt,
    generate_candidate,
    generate_offline,
    load_template,
    render_result_block,
    render_scene_description,
)
from .metrics import (
    EvalRecord,
    MetricsReport,
    answer_accuracy,
    classify,
    consistency_buckets,
    evaluate,
    extract_grounding,
    iou,
    mean_iou_correct,
    op_accuracy,
    precision_recall,
)
from .program import (
    ArgumentError,
    MalformedProgram,
    Program,
    UnknownOperation,
    parse_argument,
    parse_program,
)
from .scene_graph import (
    BBox,
    IngestWarning,
    NormBBox,
    QuestionRecord,
    RawOp,
    SceneGraph,
    SGObject,
    load_questions,
    load_scene_graphs,
    normalize_bbox,
    objects_by_name,
    sample_balanced,
)
from .sot import (
    FilterConfig,
    FilterVerdict,
    ParseError,
    filter_document,
    filter_trace,
    normalize_answer,
    parse,
    serialize,
)

__version__ = "0.1.0"
