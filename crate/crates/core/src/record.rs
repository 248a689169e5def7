//! Space-time records of ancilla outcomes and their on-disk formats.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TRAJREC\0"
//! version    u32      1
//! flags      u32      bit 0 densities, bit 1 entropy, bit 2 truncated run,
//!                     bit 3 readout errors applied
//! L          u32
//! T          u64
//! params     u64      hash of (params, couplings, truncation policy)
//! seed       u64
//! p_err      f64      0 unless bit 3 is set
//! outcomes   ceil(T*L/8) bytes, row-major (time-major), MSB first
//! densities  T*L f64  (if bit 0)
//! entropy    T f64    (if bit 1)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelParams, SiteCouplings};
use crate::mps::TruncationPolicy;

pub const MAGIC: &[u8; 8] = b"TRAJREC\0";
pub const VERSION: u32 = 1;

const FLAG_DENSITIES: u32 = 1;
const FLAG_ENTROPY: u32 = 2;
const FLAG_TRUNCATED: u32 = 4;
const FLAG_READOUT: u32 = 8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordMeta {
    pub params: Option<ModelParams>,
    pub couplings: Option<SiteCouplings>,
    pub policy: Option<TruncationPolicy>,
    pub seed: u64,
    pub params_hash: u64,
    /// Readout flip probability applied after the fact, if any.
    pub readout_error: Option<f64>,
    /// The run stopped early; only the first `steps` rows are valid.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub sites: usize,
    pub steps: usize,
    outcomes: Vec<u8>,
    pub densities: Option<Vec<f64>>,
    pub entropy: Option<Vec<f64>>,
    pub meta: RecordMeta,
}

/// Stable 64-bit digest of the physical and numerical run parameters.
pub fn params_hash(
    params: &ModelParams,
    couplings: &SiteCouplings,
    policy: Option<&TruncationPolicy>,
) -> u64 {
    let mut h = Sha256::new();
    h.update((params.sites as u64).to_le_bytes());
    for x in [params.omega, params.v, params.gamma, params.dt] {
        h.update(x.to_le_bytes());
    }
    h.update((params.substeps as u64).to_le_bytes());
    for x in couplings.v_bond.iter().chain(&couplings.gamma_site) {
        h.update(x.to_le_bytes());
    }
    if let Some(p) = policy {
        h.update(p.svd_cutoff.to_le_bytes());
        h.update((p.max_bond.unwrap_or(0) as u64).to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl TrajectoryRecord {
    pub fn from_outcomes(sites: usize, outcomes: Vec<u8>, meta: RecordMeta) -> Result<Self> {
        if sites == 0 || !outcomes.len().is_multiple_of(sites) {
            return Err(Error::Format(format!(
                "{} outcomes do not tile L = {sites}",
                outcomes.len()
            )));
        }
        if outcomes.iter().any(|&b| b > 1) {
            return Err(Error::Format("outcomes must be 0 or 1".into()));
        }
        Ok(Self {
            sites,
            steps: outcomes.len() / sites,
            outcomes,
            densities: None,
            entropy: None,
            meta,
        })
    }

    /// Build from rows of bits; convenient in tests and bindings.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let sites = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != sites) {
            return Err(Error::Format("ragged rows".into()));
        }
        Self::from_outcomes(sites, rows.concat(), RecordMeta::default())
    }

    pub(crate) fn with_capacity(sites: usize, steps: usize, meta: RecordMeta) -> Self {
        Self {
            sites,
            steps: 0,
            outcomes: Vec::with_capacity(sites * steps),
            densities: None,
            entropy: None,
            meta,
        }
    }

    pub(crate) fn push_row(&mut self, row: &[u8]) {
        debug_assert_eq!(row.len(), self.sites);
        self.outcomes.extend_from_slice(row);
        self.steps += 1;
    }

    pub fn outcome(&self, t: usize, i: usize) -> u8 {
        self.outcomes[t * self.sites + i]
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.outcomes[t * self.sites..(t + 1) * self.sites]
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub(crate) fn outcomes_mut(&mut self) -> &mut [u8] {
        &mut self.outcomes
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.outcomes
            .chunks(self.sites)
            .map(|r| r.to_vec())
            .collect()
    }

    /// Fraction of `1` outcomes over the whole record.
    pub fn average_activity(&self) -> f64 {
        average_activity(self)
    }

    /// Sub-record of rows `t0..t1` and columns `i0..i1`.
    pub fn window(&self, t0: usize, t1: usize, i0: usize, i1: usize) -> Result<Self> {
        if t0 > t1 || t1 > self.steps || i0 >= i1 || i1 > self.sites {
            return Err(Error::InvalidParameter("window outside the record".into()));
        }
        let mut out = Vec::with_capacity((t1 - t0) * (i1 - i0));
        for t in t0..t1 {
            out.extend_from_slice(&self.row(t)[i0..i1]);
        }
        Self::from_outcomes(i1 - i0, out, self.meta.clone())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut flags = 0;
        if self.densities.is_some() {
            flags |= FLAG_DENSITIES;
        }
        if self.entropy.is_some() {
            flags |= FLAG_ENTROPY;
        }
        if self.meta.truncated {
            flags |= FLAG_TRUNCATED;
        }
        if self.meta.readout_error.is_some() {
            flags |= FLAG_READOUT;
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&flags.to_le_bytes())?;
        w.write_all(&(self.sites as u32).to_le_bytes())?;
        w.write_all(&(self.steps as u64).to_le_bytes())?;
        w.write_all(&self.meta.params_hash.to_le_bytes())?;
        w.write_all(&self.meta.seed.to_le_bytes())?;
        w.write_all(&self.meta.readout_error.unwrap_or(0.0).to_le_bytes())?;
        let mut packed = vec![0u8; self.outcomes.len().div_ceil(8)];
        for (n, &b) in self.outcomes.iter().enumerate() {
            if b == 1 {
                packed[n / 8] |= 0x80 >> (n % 8);
            }
        }
        w.write_all(&packed)?;
        for x in self
            .densities
            .iter()
            .flatten()
            .chain(self.entropy.iter().flatten())
        {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let flags = read_u32(&mut r)?;
        let sites = read_u32(&mut r)? as usize;
        let steps = read_u64(&mut r)? as usize;
        let params_hash = read_u64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let p_err = f64::from_le_bytes(read_array(&mut r)?);
        let n = sites
            .checked_mul(steps)
            .ok_or_else(|| Error::Format("record dimensions overflow".into()))?;
        let mut packed = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut packed)?;
        let outcomes = (0..n).map(|k| (packed[k / 8] >> (7 - k % 8)) & 1).collect();
        let read_f64s = |r: &mut R, len: usize| -> Result<Vec<f64>> {
            (0..len)
                .map(|_| Ok(f64::from_le_bytes(read_array(r)?)))
                .collect()
        };
        let densities = if flags & FLAG_DENSITIES != 0 {
            Some(read_f64s(&mut r, n)?)
        } else {
            None
        };
        let entropy = if flags & FLAG_ENTROPY != 0 {
            Some(read_f64s(&mut r, steps)?)
        } else {
            None
        };
        let meta = RecordMeta {
            seed,
            params_hash,
            readout_error: (flags & FLAG_READOUT != 0).then_some(p_err),
            truncated: flags & FLAG_TRUNCATED != 0,
            ..Default::default()
        };
        Ok(Self {
            sites,
            steps,
            outcomes,
            densities,
            entropy,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Plain PBM (P1) raster: one row per time step, `1` = black.
    pub fn write_pbm<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "P1\n{} {}", self.sites, self.steps)?;
        for row in self.outcomes.chunks(self.sites) {
            let line: Vec<&str> = row
                .iter()
                .map(|b| if *b == 1 { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Binary PGM (P5) raster of the density field, 0 -> black, 1 -> white.
    pub fn write_density_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let dens = self
            .densities
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("record carries no densities".into()))?;
        write!(w, "P5\n{} {}\n255\n", self.sites, self.steps)?;
        let bytes: Vec<u8> = dens
            .iter()
            .map(|d| (d.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// `(1/LT) Σ_t Σ_i k_i(t)`.
pub fn average_activity(record: &TrajectoryRecord) -> f64 {
    if record.outcomes.is_empty() {
        return 0.0;
    }
    record.outcomes.iter().map(|&b| b as u64).sum::<u64>() as f64 / record.outcomes.len() as f64
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn activity_of_simple_records() {
        let zeros = TrajectoryRecord::from_rows(&[vec![0, 0, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(zeros.average_activity(), 0.0);
        let ones = TrajectoryRecord::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(ones.average_activity(), 1.0);
        let checker = TrajectoryRecord::from_rows(&[vec![0, 1, 0, 1], vec![1, 0, 1, 0]]).unwrap();
        assert_eq!(checker.average_activity(), 0.5);
    }

    #[test]
    fn rejects_non_binary() {
        assert!(TrajectoryRecord::from_rows(&[vec![0, 2]]).is_err());
        assert!(TrajectoryRecord::from_rows(&[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn rasters() {
        let mut rec = TrajectoryRecord::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        let mut buf = Vec::new();
        rec.write_pbm(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "P1\n2 2\n0 1\n1 0\n");
        assert!(rec.write_density_pgm(Vec::new()).is_err());
        rec.densities = Some(vec![0.0, 1.0, 0.5, 0.25]);
        let mut buf = Vec::new();
        rec.write_density_pgm(&mut buf).unwrap();
        assert_eq!(&buf[buf.len() - 4..], &[0, 255, 128, 64]);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = TrajectoryRecord::read_from(&b"NOTAREC\0\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    proptest! {
        #[test]
        fn binary_round_trip(sites in 1usize..9, bits in proptest::collection::vec(0u8..2, 0..200),
                             with_diag in any::<bool>(), seed in any::<u64>()) {
            let n = bits.len() / sites * sites;
            let mut rec = TrajectoryRecord::from_outcomes(sites, bits[..n].to_vec(), RecordMeta {
                seed, params_hash: seed.rotate_left(7), readout_error: with_diag.then_some(0.02),
                truncated: with_diag, ..Default::default()
            }).unwrap();
            if with_diag {
                rec.densities = Some((0..n).map(|k| k as f64 / (n.max(1)) as f64).collect());
                rec.entropy = Some((0..rec.steps).map(|t| t as f64 * 0.1).collect());
            }
            let mut buf = Vec::new();
            rec.write_to(&mut buf).unwrap();
            let back = TrajectoryRecord::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}
