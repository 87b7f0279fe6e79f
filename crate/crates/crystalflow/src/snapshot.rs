//! Binary field snapshot format shared between the library and the CLI.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "CRFS"
//! version u32      1
//! d       u32
//! n       u32
//! shape   d × u64
//! flags   u8       bit 0: half-space slab (zero plane at x_1 = 0)
//! u       sites × n × f64   row-major sites, components fastest
//! v       sites × n × f64
//! ```

use crate::lattice::LatticeShape;
use crate::measures::FieldState;
use crate::{Error, Result, Scalar};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CRFS";
const VERSION: u32 = 1;

pub fn write_snapshot<T: Scalar, W: Write>(field: &FieldState<T>, mut out: W) -> Result<()> {
    field.validate()?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(field.shape().dim() as u32).to_le_bytes())?;
    out.write_all(&(field.components() as u32).to_le_bytes())?;
    for &d in field.shape().dims() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    out.write_all(&[u8::from(field.half_space())])?;
    for value in field.u() {
        out.write_all(&value.to_f64().to_le_bytes())?;
    }
    for value in field.v() {
        out.write_all(&value.to_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<T: Scalar, R: Read>(mut input: R) -> Result<FieldState<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::SnapshotFormat(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::SnapshotFormat(format!(
            "unsupported version {version}"
        )));
    }
    let d = read_u32(&mut input)? as usize;
    let n = read_u32(&mut input)? as usize;
    if d == 0 || d > 16 || n == 0 || n > 1024 {
        return Err(Error::SnapshotFormat(format!(
            "implausible header: d = {d}, n = {n}"
        )));
    }
    let mut dims = Vec::with_capacity(d);
    for _ in 0..d {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let dim = u64::from_le_bytes(buf);
        if dim == 0 || dim > (1 << 32) {
            return Err(Error::SnapshotFormat(format!("implausible extent {dim}")));
        }
        dims.push(dim as usize);
    }
    let mut flags = [0u8; 1];
    input.read_exact(&mut flags)?;
    let shape = LatticeShape::new(dims);
    let mut field = FieldState::zeros(shape, n);
    let mut buf = [0u8; 8];
    for i in 0..field.u().len() {
        input.read_exact(&mut buf)?;
        field.u_mut()[i] = T::of(f64::from_le_bytes(buf));
    }
    for i in 0..field.v().len() {
        input.read_exact(&mut buf)?;
        field.v_mut()[i] = T::of(f64::from_le_bytes(buf));
    }
    field.validate()?;
    if flags[0] & 1 != 0 {
        field = field.set_half_space(true)?;
    }
    Ok(field)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save<T: Scalar>(field: &FieldState<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_snapshot(field, std::io::BufWriter::new(file))
}

pub fn load<T: Scalar>(path: &Path) -> Result<FieldState<T>> {
    let file = std::fs::File::open(path)?;
    read_snapshot(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_garbage() {
        assert!(read_snapshot::<f64, _>(&b"NOPE"[..]).is_err());
        let mut truncated = Vec::new();
        truncated.extend_from_slice(MAGIC);
        truncated.extend_from_slice(&VERSION.to_le_bytes());
        assert!(read_snapshot::<f64, _>(&truncated[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn roundtrip(
            n1 in 1usize..6,
            n2 in 1usize..6,
            comps in 1usize..3,
            seed in 0u64..1000,
            half in proptest::bool::ANY,
        ) {
            let shape = LatticeShape::new(vec![n1, n2]);
            let mut field = FieldState::<f64>::zeros(shape, comps);
            let mut state = seed.wrapping_add(1);
            for slot in 0..field.u().len() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                field.u_mut()[slot] = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                field.v_mut()[slot] = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            }
            if half {
                field.clear_boundary_plane();
                field = field.set_half_space(true).unwrap();
            }
            let mut buf = Vec::new();
            write_snapshot(&field, &mut buf).unwrap();
            let back = read_snapshot::<f64, _>(&buf[..]).unwrap();
            prop_assert_eq!(back, field);
        }
    }
}
