//! Flat binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "ESNN"
//! version    u32      1
//! layers     u32      L
//! sizes      (L + 1) x u32
//! activation L x u8   0 = relu, 1 = relu+1, 2 = linear
//! count      u64      number of parameters
//! params     count x f64, per layer: row-major `out x in` weights then biases
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Mlp};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ESNN";
const VERSION: u32 = 1;

pub fn write_mlp<W: Write>(out: &mut W, net: &Mlp) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(net.layer_count() as u32).to_le_bytes())?;
    for &s in net.sizes() {
        out.write_all(&(s as u32).to_le_bytes())?;
    }
    for a in net.activations() {
        out.write_all(&[a.code()])?;
    }
    out.write_all(&(net.param_count() as u64).to_le_bytes())?;
    for p in net.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_mlp<R: Read>(input: &mut R) -> Result<Mlp> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Incompatible("not a network checkpoint".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Incompatible(format!("unsupported checkpoint version {version}")));
    }
    let layers = read_u32(input)? as usize;
    if layers == 0 || layers > 64 {
        return Err(Error::Incompatible(format!("implausible layer count {layers}")));
    }
    let sizes = (0..=layers)
        .map(|_| read_u32(input).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut codes = vec![0u8; layers];
    input.read_exact(&mut codes)?;
    let activations = codes
        .iter()
        .map(|&c| Activation::from_code(c).ok_or_else(|| Error::Incompatible(format!("unknown activation code {c}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut count = [0u8; 8];
    input.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    let template = Mlp::zeros(&sizes, &activations)?;
    if count != template.param_count() {
        return Err(Error::Incompatible(format!(
            "header declares {count} parameters, shape implies {}",
            template.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        input.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    Mlp::from_parts(&sizes, &activations, params)
}

pub fn save(path: &Path, net: &Mlp) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_mlp(&mut out, net)?;
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mlp> {
    read_mlp(&mut BufReader::new(File::open(path)?))
}

/// Loads a checkpoint and insists it has the same shape as `template`.
pub fn load_like(path: &Path, template: &Mlp) -> Result<Mlp> {
    let net = load(path)?;
    if !net.same_shape(template) {
        return Err(Error::Incompatible(format!(
            "{} has shape {:?}, expected {:?}",
            path.display(),
            net.sizes(),
            template.sizes()
        )));
    }
    Ok(net)
}
