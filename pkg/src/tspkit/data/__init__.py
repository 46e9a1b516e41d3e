from .io import (
    LoadResult,
    load_image,
    load_instance_map,
    load_label_map,
    load_split,
    read_manifest,
    save_dataset,
    save_image,
    save_instance_map,
    save_label_map,
)
from .maps import (
    INSTANCE_MULTIPLIER,
    SPLITS,
    WEATHER_TAGS,
    AnnotatedImage,
    AnnotationError,
    InstanceMap,
    LabelMap,
    Placement,
    ValidationReport,
    decode_instance_id,
    encode_instance_id,
    validate_pair,
)
from .registry import (
    DEFAULT_CLASS_NAMES,
    IGNORE_LABEL,
    ClassInfo,
    ClassRegistry,
    RegistryError,
    default_registry,
    toy_registry,
)
from .synthetic import GenerationError, class_palette, generate_synthetic
