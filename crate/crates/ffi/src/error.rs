use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use vbmkit::Error;

/// Return code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VbmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Geometry = 5,
    Tissue = 6,
    Registration = 7,
    Statistics = 8,
    Panic = 9,
}

impl VbmStatus {
    fn of(e: &Error) -> Self {
        match e {
            Error::UnsupportedDatatype(_) | Error::MalformedHeader(_) | Error::TruncatedData { .. } => Self::Format,
            Error::Io { .. } => Self::Io,
            Error::GeometryMismatch(_) | Error::InvalidVolume(_) | Error::EmptyMask(_) => Self::Geometry,
            Error::DegenerateIntensity(_)
            | Error::ValueOutOfRange { .. }
            | Error::NonAdjacentMixture { .. }
            | Error::CoverageImpossible { .. } => Self::Tissue,
            Error::NonFiniteLoss { .. } | Error::JacobianFoldover { .. } => Self::Registration,
            Error::RankDeficientDesign | Error::SubjectCountMismatch { .. } | Error::DegenerateVariance => {
                Self::Statistics
            }
            Error::MagnitudeOutOfRange { .. } | Error::ConfigInvalid(_) | Error::InvalidArgument(_) => {
                Self::InvalidArgument
            }
            Error::Step { source, .. } => Self::of(source),
        }
    }
}

pub(crate) struct Failure {
    status: VbmStatus,
    message: String,
}

impl Failure {
    pub(crate) fn null(what: &str) -> Self {
        Self {
            status: VbmStatus::NullPointer,
            message: format!("{what} is null"),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Self {
            status: VbmStatus::InvalidArgument,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            status: VbmStatus::of(&e),
            message: e.to_string(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, recording its failure or panic for [`vbm_last_error`].
pub(crate) fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VbmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VbmStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            VbmStatus::Panic
        }
    }
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vbm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Forgets the stored error message.
#[no_mangle]
pub extern "C" fn vbm_clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn vbm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
