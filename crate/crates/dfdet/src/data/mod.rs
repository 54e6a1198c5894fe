//! Dataset manifests, the face preprocessing pipeline behind a pluggable
//! detector, train-time augmentations, split construction, and synthetic
//! data generators for desk-scale runs.

pub mod augment;
pub mod detector;
pub mod imgproc;
pub mod manifest;
pub mod preprocess;
pub mod sampling;
pub mod split;
pub mod synthetic;
pub mod video;

pub use augment::{augment_for_split, augment_image, AugmentParams};
pub use detector::{Detection, FaceBox, FaceDetector, FixedDetector, SyntheticFaceDetector};
pub use manifest::{read_manifests, write_manifests, FrameRecord, Label, Split, VideoManifest};
pub use preprocess::{
    expand_box, preprocess_dataset, preprocess_video, PreprocessOptions, PreprocessTask,
};
pub use sampling::sample_frames;
pub use split::{build_split, SplitSpec};
pub use video::{FrameDirVideo, VideoSource};
