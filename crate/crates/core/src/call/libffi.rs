//! libffi, loaded at run time through [`LibraryHandle`] so no development
//! headers or link-time dependency are needed.

use std::ffi::c_void;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::loader::LibraryHandle;
use crate::memory::Address;
use crate::types::Scalar;

const CANDIDATES: &[&str] = &[
    "libffi.so.8",
    "libffi.so.7",
    "libffi.so.6",
    "libffi.so",
    "libffi.8.dylib",
    "libffi.dylib",
];

#[cfg(target_arch = "x86_64")]
const DEFAULT_ABI: u32 = 2; // FFI_UNIX64
#[cfg(not(target_arch = "x86_64"))]
const DEFAULT_ABI: u32 = 1; // FFI_SYSV

const FFI_OK: u32 = 0;

#[repr(C)]
pub(crate) struct FfiType {
    _opaque: [u8; 0],
}

#[repr(C)]
struct FfiCif {
    abi: u32,
    nargs: u32,
    arg_types: *mut *mut FfiType,
    rtype: *mut FfiType,
    bytes: u32,
    flags: u32,
    // Room for FFI_EXTRA_CIF_FIELDS on targets that define them.
    _extra: [u64; 4],
}

type PrepCif = unsafe extern "C" fn(*mut FfiCif, u32, u32, *mut FfiType, *mut *mut FfiType) -> u32;
type Call = unsafe extern "C" fn(*mut FfiCif, *const c_void, *mut c_void, *mut *mut c_void);

struct Api {
    _library: LibraryHandle,
    prep_cif: PrepCif,
    call: Call,
    void: *mut FfiType,
    // indexed by Scalar::ALL position
    scalars: [*mut FfiType; 12],
}

// The type descriptors are immutable statics inside libffi.
unsafe impl Send for Api {}
unsafe impl Sync for Api {}

static API: OnceLock<std::result::Result<Api, String>> = OnceLock::new();

fn load() -> std::result::Result<Api, String> {
    let library = CANDIDATES
        .iter()
        .find_map(|name| LibraryHandle::open(name, None).ok())
        .ok_or_else(|| format!("libffi not found (tried {})", CANDIDATES.join(", ")))?;
    let sym = |name: &str| -> std::result::Result<Address, String> {
        library.resolve(name).map_err(|e| e.to_string())
    };
    let ty = |name: &str| sym(name).map(|a| a.as_mut_ptr::<FfiType>());
    let scalar_symbol = |s: Scalar| match s {
        Scalar::Int8 => "ffi_type_sint8",
        Scalar::UInt8 => "ffi_type_uint8",
        Scalar::Int16 => "ffi_type_sint16",
        Scalar::UInt16 => "ffi_type_uint16",
        Scalar::Int32 => "ffi_type_sint32",
        Scalar::UInt32 => "ffi_type_uint32",
        Scalar::Int64 => "ffi_type_sint64",
        Scalar::UInt64 => "ffi_type_uint64",
        Scalar::Float32 => "ffi_type_float",
        Scalar::Float64 => "ffi_type_double",
        Scalar::Address | Scalar::CString => "ffi_type_pointer",
    };
    let mut scalars = [std::ptr::null_mut(); 12];
    for (slot, s) in scalars.iter_mut().zip(Scalar::ALL) {
        *slot = ty(scalar_symbol(s))?;
    }
    let prep_cif = sym("ffi_prep_cif")?;
    let call = sym("ffi_call")?;
    Ok(Api {
        prep_cif: unsafe { std::mem::transmute::<*const c_void, PrepCif>(prep_cif.as_ptr()) },
        call: unsafe { std::mem::transmute::<*const c_void, Call>(call.as_ptr()) },
        void: ty("ffi_type_void")?,
        scalars,
        _library: library,
    })
}

fn api() -> Result<&'static Api> {
    API.get_or_init(load)
        .as_ref()
        .map_err(|e| Error::EngineUnavailable(e.clone()))
}

pub(crate) fn available() -> bool {
    api().is_ok()
}

fn scalar_type(api: &Api, s: Scalar) -> *mut FfiType {
    let index = Scalar::ALL.iter().position(|&x| x == s).expect("listed");
    api.scalars[index]
}

/// A call interface prepared once and reused for every call.
pub(crate) struct PreparedCif {
    cif: Box<FfiCif>,
    _arg_types: Box<[*mut FfiType]>,
}

// Read-only after preparation; ffi_call does not mutate the cif.
unsafe impl Send for PreparedCif {}
unsafe impl Sync for PreparedCif {}

impl PreparedCif {
    pub(crate) fn new(ret: Option<Scalar>, params: &[Scalar]) -> Result<Self> {
        let api = api()?;
        let mut arg_types: Box<[*mut FfiType]> = params.iter().map(|&s| scalar_type(api, s)).collect();
        let rtype = ret.map_or(api.void, |s| scalar_type(api, s));
        let mut cif = Box::new(FfiCif {
            abi: 0,
            nargs: 0,
            arg_types: std::ptr::null_mut(),
            rtype: std::ptr::null_mut(),
            bytes: 0,
            flags: 0,
            _extra: [0; 4],
        });
        let status = unsafe {
            (api.prep_cif)(
                &mut *cif,
                DEFAULT_ABI,
                params.len() as u32,
                rtype,
                arg_types.as_mut_ptr(),
            )
        };
        if status != FFI_OK {
            return Err(Error::UnsupportedType(format!(
                "ffi_prep_cif rejected the signature (status {status})"
            )));
        }
        Ok(PreparedCif {
            cif,
            _arg_types: arg_types,
        })
    }

    /// # Safety
    ///
    /// `args` must point at correctly typed values for every parameter and
    /// `ret` at 16 writable, 8-aligned bytes.
    pub(crate) unsafe fn call(&self, target: Address, args: &[*const c_void], ret: *mut u64) {
        let api = api().expect("prepared cif implies a loaded libffi");
        let cif = &*self.cif as *const FfiCif as *mut FfiCif;
        unsafe {
            (api.call)(
                cif,
                target.as_ptr(),
                ret.cast(),
                args.as_ptr() as *mut *mut c_void,
            )
        }
    }
}
