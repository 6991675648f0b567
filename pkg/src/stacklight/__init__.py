"""Stack-light monitoring: detection, classification and state tracking of
industrial signal-light towers in video frames, with a synthetic ground-truth
generator and an evaluation harness."""

from .imaging import (
    GRAY,
    HSV,
    RGB,
    BoundingBox,
    Image,
    crop,
    hsv_to_rgb,
    iou,
    read_image,
    resize_bicubic,
    rgb_to_hsv,
    write_image,
)
from .labels import CLASS_NAMES, CLASS_ORDER, LightCombination
from .perturb import (
    Compose,
    DefocusBlur,
    Downscale,
    Gamma,
    MotionBlur,
    SweepGrid,
    apply,
    default_sweep_grid,
    gamma_correct,
    gaussian_blur,
    motion_blur,
)
from .synth import (
    Annotation,
    CropExample,
    GenerationConfig,
    Renderer,
    SceneConfig,
    Timeline,
    TowerModel,
    TowerSpec,
    build_crop_dataset,
    build_timeline,
    combination_from_pixels,
    crop_light,
    generate_dataset,
    random_other_crop,
    render_frame,
    sample_scene,
)
from .detect import (
    Detection,
    Detector,
    SpotlightDetector,
    SpotlightParams,
    TileGrid,
    detect_frame,
    nms,
    preprocess,
    spotlight_detect,
    to_frame_coords,
)
from .classify import (
    FeatureConfig,
    SoftmaxModel,
    TrainConfig,
    extract_features,
    forward,
    load_model,
    loss_and_gradient,
    predict,
    prepare_crop,
    save_model,
    temporal_smooth,
    train,
)
from .tracker import (
    MachineState,
    MachineTracker,
    StateLedger,
    TrackerConfig,
    map_state,
)
from .evaluation import (
    ConfusionMatrix,
    DetectionMetrics,
    evaluate_classifier,
    match_detections,
    rebalance,
    run_sweep,
    split_dataset,
)

__version__ = "0.1.0"
