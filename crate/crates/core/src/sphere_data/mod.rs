//! Sky maps, masks and the flat patches cut from them.

mod bundle;
mod map;
mod patch;
mod project;
pub mod synthetic;

pub use bundle::{load_bundle, save_bundle, Bundle, Manifest, ManifestEntry, Split, MANIFEST};
pub(crate) use bundle::{read_array, write_array};
pub use map::{
    load_map, read_mask_map, read_sphere_map, save_map, save_mask, LoadedMap, MapFormat, MapKind, MaskMap, Ordering,
    SphereMap, UNSEEN,
};
pub use patch::{
    check_binary, denormalize, make_grid, normalize, zero_holes, NormMode, NormSource, NormalizationRecord, Patch,
    PatchGrid, PatchSpec,
};
pub use project::{project_mask, project_patch, reassemble, segment, Interp, SegmentOptions};
