//! EVEC embedding files.
//!
//! ```text
//! "EVEC" | version u8 = 1 | dtype u8 = 0 | reserved [u8; 3]
//! count u32 | dim u32 | count * dim f32 (row-major)
//! optional: "LBLS" | count u32 | count * u32
//! ```

use std::path::Path;

use super::EmbeddingSet;
use crate::container::{self, Reader, Writer, DTYPE_F32};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EVEC";
const LABEL_MAGIC: &[u8; 4] = b"LBLS";

/// Size of a header-only file.
pub const EVEC_HEADER_LEN: usize = 17;

pub fn load_evec(path: &Path) -> Result<EmbeddingSet> {
    read_evec(&container::read_file(path)?)
}

pub fn write_evec(set: &EmbeddingSet, path: &Path) -> Result<()> {
    container::write_file(path, &evec_bytes(set)?)
}

pub fn read_evec(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = Reader::new(bytes);
    let start = r.offset();
    let dtype = r.preamble(MAGIC)?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(start + 5, format!("unsupported dtype {dtype}")));
    }
    // Reserved bytes must be zero so that re-serialization is byte-identical.
    if bytes[6..9] != [0, 0, 0] {
        return Err(Error::format(6, "reserved bytes must be zero"));
    }
    let count = r.usize()?;
    let dim_offset = r.offset();
    let dim = r.usize()?;
    if dim == 0 {
        return Err(Error::format(dim_offset, "dim must be positive"));
    }
    let total = count
        .checked_mul(dim)
        .ok_or_else(|| r.err("count * dim overflows"))?;
    let data = r.finite_f32s(total)?;
    let labels = if r.is_empty() {
        None
    } else {
        let at = r.offset();
        if r.take(4)? != LABEL_MAGIC {
            return Err(Error::format(at, "expected label block magic LBLS"));
        }
        let at = r.offset();
        let n = r.usize()?;
        if n != count {
            return Err(Error::format(
                at,
                format!("label count {n} does not match vector count {count}"),
            ));
        }
        Some(r.u32s(n)?)
    };
    r.expect_end()?;
    EmbeddingSet::new(dim, data, labels)
}

pub(crate) fn evec_bytes(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut w = Writer::with_preamble(MAGIC, DTYPE_F32);
    w.len_u32(set.count())?;
    w.len_u32(set.dim())?;
    w.f32s(set.as_flat());
    if let Some(labels) = set.labels() {
        w.bytes(LABEL_MAGIC);
        w.len_u32(labels.len())?;
        for &l in labels {
            w.u32(l);
        }
    }
    Ok(w.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(count: u32, dim: u32) -> Vec<u8> {
        let mut b = b"EVEC\x01\x00\x00\x00\x00".to_vec();
        b.extend_from_slice(&count.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b
    }

    #[test]
    fn header_echo() {
        let mut b = header(2, 3);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let set = read_evec(&b).unwrap();
        assert_eq!((set.count(), set.dim()), (2, 3));
        assert!(set.labels().is_none());
    }

    #[test]
    fn empty_body_is_valid() {
        let set = read_evec(&header(0, 4)).unwrap();
        assert_eq!(set.count(), 0);
    }

    #[test]
    fn empty_set_writes_seventeen_bytes() {
        let set = EmbeddingSet::empty(8).unwrap();
        let bytes = evec_bytes(&set).unwrap();
        assert_eq!(bytes.len(), EVEC_HEADER_LEN);
    }

    #[test]
    fn labels_produce_label_block() {
        let set = EmbeddingSet::new(1, vec![0.5, 0.25], Some(vec![4, 9])).unwrap();
        let bytes = evec_bytes(&set).unwrap();
        assert_eq!(&bytes[25..29], b"LBLS");
        assert_eq!(bytes.len(), 17 + 8 + 4 + 4 + 8);
    }

    #[test]
    fn errors_name_offsets() {
        let bad_magic = b"EVEX\x01\x00\x00\x00\x00".to_vec();
        assert!(matches!(read_evec(&bad_magic), Err(Error::Format { offset: 0, .. })));

        assert!(matches!(read_evec(&header(1, 0)), Err(Error::Format { offset: 13, .. })));

        let mut truncated = header(2, 2);
        truncated.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(read_evec(&truncated), Err(Error::Format { offset: 17, .. })));

        let mut nan = header(1, 2);
        nan.extend_from_slice(&1.0f32.to_le_bytes());
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_evec(&nan), Err(Error::Format { offset: 21, .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.evec");
        let set = EmbeddingSet::new(2, vec![1.0, -0.0, 3.5, 2.0], Some(vec![1, 2])).unwrap();
        write_evec(&set, &path).unwrap();
        assert_eq!(load_evec(&path).unwrap(), set);
    }

    fn valid_file() -> impl Strategy<Value = Vec<u8>> {
        (1usize..6, 0usize..6, any::<bool>()).prop_flat_map(|(dim, count, labeled)| {
            (
                prop::collection::vec(
                    any::<f32>().prop_filter("finite", |v| v.is_finite()),
                    dim * count,
                ),
                prop::collection::vec(any::<u32>(), count),
            )
                .prop_map(move |(data, labels)| {
                    let mut b = header(count as u32, dim as u32);
                    for v in data {
                        b.extend_from_slice(&v.to_le_bytes());
                    }
                    if labeled {
                        b.extend_from_slice(b"LBLS");
                        b.extend_from_slice(&(count as u32).to_le_bytes());
                        for l in labels {
                            b.extend_from_slice(&l.to_le_bytes());
                        }
                    }
                    b
                })
        })
    }

    proptest! {
        #[test]
        fn write_of_load_is_byte_identical(file in valid_file()) {
            let set = read_evec(&file).unwrap();
            prop_assert_eq!(evec_bytes(&set).unwrap(), file);
        }
    }
}
