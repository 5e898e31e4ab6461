mod folder;
mod image;
mod noise;
mod split;
mod synthetic;

pub use self::folder::{discover_class_names, load_image_folder};
pub use self::image::{stack, Image};
pub use self::noise::{
    apply_records, corrupt_label, export_records, import_records, inject_symmetric_noise, transition_matrix,
    NoiseSpec, RecordLine, TEST_SPLIT_NAME,
};
pub use self::split::{CorruptionRecord, DatasetSplit, LabeledImage, Source, TrainerView};
pub use self::synthetic::{make_synthetic_dataset, SyntheticSpec};
