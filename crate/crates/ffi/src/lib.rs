//! C ABI over the vbmkit numerical core.
//!
//! Volumes and deformation fields cross the boundary as opaque handles that
//! the caller releases with `vbm_volume_free` and `vbm_field_free`. Every
//! fallible function returns a [`VbmStatus`]; on failure the message is
//! available from [`vbm_last_error`] on the same thread. Results come back
//! through out-pointers, which are left untouched on error.
//!
//! ```c
//! VbmVolume *img = NULL;
//! if (vbm_volume_read("t1.nii", &img) != VBM_STATUS_OK) {
//!     fprintf(stderr, "%s\n", vbm_last_error());
//!     return 1;
//! }
//! VbmVolume *s = NULL;
//! vbm_smooth(img, 6.0, &s);
//! vbm_volume_free(s);
//! vbm_volume_free(img);
//! ```

mod error;
mod field;
mod volume;

pub use error::*;
pub use field::*;
pub use volume::*;
