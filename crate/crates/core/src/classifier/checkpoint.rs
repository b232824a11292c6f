//! Binary model checkpoints.
//!
//! Layout, little-endian: magic `TPNN`, `u32` version, eight `u32`
//! architecture dimensions, `f64` BN epsilon and decision threshold, then
//! the input mean and std, the fourteen parameter groups and the four BN
//! running-statistic vectors as flat `f64` arrays. Array lengths follow
//! from the dimensions.

use std::io::{Read, Write};

use super::network::{Architecture, Params, RunningStats};
use super::Classifier;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TPNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put(out: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(c: &Classifier, out: &mut W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for d in c.arch.dims() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument("dimension exceeds u32".into()))?;
        out.write_all(&d.to_le_bytes())?;
    }
    put(out, &[c.bn_eps, c.threshold])?;
    put(out, &c.input_mean)?;
    put(out, &c.input_std)?;
    for g in c.params.groups() {
        put(out, g)?;
    }
    for s in [&c.stats.bn1_mean, &c.stats.bn1_var, &c.stats.bn2_mean, &c.stats.bn2_var] {
        put(out, s)?;
    }
    Ok(())
}

fn take(input: &mut impl Read, v: &mut [f64]) -> Result<()> {
    let mut b = [0u8; 8];
    for x in v {
        input
            .read_exact(&mut b)
            .map_err(|_| Error::Parse("checkpoint truncated".into()))?;
        *x = f64::from_le_bytes(b);
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Classifier> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Parse("checkpoint truncated".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse("not a model checkpoint".into()));
    }
    let mut word = [0u8; 4];
    let mut u32_field = |input: &mut R| -> Result<u32> {
        input
            .read_exact(&mut word)
            .map_err(|_| Error::Parse("checkpoint truncated".into()))?;
        Ok(u32::from_le_bytes(word))
    };
    let version = u32_field(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = u32_field(input)? as usize;
    }
    let arch = Architecture::from_dims(dims);
    arch.validate()?;
    let mut head = [0.0; 2];
    take(input, &mut head)?;
    let mut input_mean = vec![0.0; arch.input_len];
    let mut input_std = vec![0.0; arch.input_len];
    take(input, &mut input_mean)?;
    take(input, &mut input_std)?;
    let mut params = Params::zeros(&arch);
    for g in params.groups_mut() {
        take(input, g)?;
    }
    let mut stats = RunningStats::identity(&arch);
    for s in [&mut stats.bn1_mean, &mut stats.bn1_var, &mut stats.bn2_mean, &mut stats.bn2_var] {
        take(input, s)?;
    }
    if stats.bn1_var.iter().chain(&stats.bn2_var).any(|v| !(*v >= 0.0)) || !params.all_finite() {
        return Err(Error::Parse("checkpoint holds invalid parameters".into()));
    }
    Ok(Classifier {
        arch,
        params,
        stats,
        input_mean,
        input_std,
        bn_eps: head[0],
        threshold: head[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::network::random_params;
    use crate::rng::substream;

    #[test]
    fn round_trip_is_exact() {
        let arch = Architecture::tiny();
        let mut rng = substream(1, 0);
        let c = Classifier {
            arch,
            params: random_params(&arch, &mut rng),
            stats: RunningStats::identity(&arch),
            input_mean: (0..32).map(|i| i as f64 * 0.1).collect(),
            input_std: vec![2.0; 32],
            bn_eps: 1e-5,
            threshold: 0.4,
        };
        let mut buf = Vec::new();
        write_checkpoint(&c, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"TPNN");
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let x: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        assert_eq!(back.predict_proba(&x).unwrap(), c.predict_proba(&x).unwrap());

        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
    }
}
