use std::ffi::CString;
use std::fs::File;
use std::io;
use std::os::fd::FromRawFd;

use memmap2::{MmapMut, MmapOptions};

use super::header::{HeaderRef, HEADER_LEN, RECORD_LEN};
use super::{SegmentName, ShmError};

/// One mapped POSIX shared-memory object.
pub(crate) struct Segment {
    name: SegmentName,
    map: MmapMut,
    header: HeaderRef,
}

fn os_name(name: &SegmentName) -> CString {
    CString::new(format!("/{name}")).expect("segment names contain no NUL")
}

fn shm_open(name: &SegmentName, flags: libc::c_int) -> io::Result<File> {
    let c = os_name(name);
    // SAFETY: `c` is a valid NUL-terminated string.
    let fd = unsafe { libc::shm_open(c.as_ptr(), flags, 0o600) };
    if fd < 0 {
        return Err(io::Error::last_os_error());
    }
    // SAFETY: `fd` was just returned by shm_open and is owned by nobody else.
    Ok(unsafe { File::from_raw_fd(fd) })
}

impl Segment {
    pub fn create(name: &SegmentName, capacity: u64) -> Result<Segment, ShmError> {
        if capacity < (HEADER_LEN + RECORD_LEN) as u64 {
            return Err(ShmError::CapacityTooSmall(capacity));
        }
        let file = shm_open(name, libc::O_CREAT | libc::O_EXCL | libc::O_RDWR).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                ShmError::Exists(name.clone())
            } else {
                ShmError::Resource(format!("creating {name}: {e}"))
            }
        })?;
        let sized = file.set_len(capacity).and_then(|_| {
            // SAFETY: the object was just sized and is only accessed through
            // atomics by cooperating processes.
            unsafe { MmapOptions::new().len(capacity as usize).map_mut(&file) }
        });
        let mut map = match sized {
            Ok(m) => m,
            Err(e) => {
                let _ = unlink(name);
                return Err(ShmError::Resource(format!("mapping {name}: {e}")));
            }
        };
        // SAFETY: the mapping is page aligned, at least HEADER_LEN bytes and
        // owned by the returned Segment.
        let header = unsafe { HeaderRef::new(map.as_mut_ptr()) };
        header.init(capacity);
        Ok(Segment {
            name: name.clone(),
            map,
            header,
        })
    }

    /// Maps an existing segment read-write; readers need write access only for
    /// the reader count.
    pub fn open(name: &SegmentName) -> Result<Segment, ShmError> {
        let file = shm_open(name, libc::O_RDWR).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                ShmError::NotFound(name.clone())
            } else {
                ShmError::Resource(format!("opening {name}: {e}"))
            }
        })?;
        let len = file
            .metadata()
            .map_err(|e| ShmError::Resource(format!("sizing {name}: {e}")))?
            .len();
        if len < HEADER_LEN as u64 {
            return Err(ShmError::Incompatible(format!(
                "{name} is {len} bytes, smaller than the header"
            )));
        }
        // SAFETY: see `create`.
        let mut map = unsafe { MmapOptions::new().len(len as usize).map_mut(&file) }
            .map_err(|e| ShmError::Resource(format!("mapping {name}: {e}")))?;
        // SAFETY: as in `create`.
        let header = unsafe { HeaderRef::new(map.as_mut_ptr()) };
        Ok(Segment {
            name: name.clone(),
            map,
            header,
        })
    }

    pub fn name(&self) -> &SegmentName {
        &self.name
    }

    pub fn header(&self) -> HeaderRef {
        self.header
    }

    pub fn mapped_len(&self) -> usize {
        self.map.len()
    }

    /// Number of whole records the mapping can hold.
    pub fn record_capacity(&self) -> usize {
        (self.map.len() - HEADER_LEN) / RECORD_LEN
    }
}

pub(crate) fn unlink(name: &SegmentName) -> io::Result<()> {
    let c = os_name(name);
    // SAFETY: `c` is a valid NUL-terminated string.
    if unsafe { libc::shm_unlink(c.as_ptr()) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}
