//! Versioned binary snapshots of continuation points: a small header (magic,
//! endianness sentinel, version, demo identity) followed by little-endian
//! f64 payload arrays. Round trips are bit-exact so interrupted runs resume
//! deterministically.

use crate::hopf::{HopfOrbit, HopfTangent, HopfWeights};
use crate::problem::ParamVec;
use ndarray::prelude::*;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"PDC1";
const ENDIAN_SENTINEL: u32 = 0x0102_0304;
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("endianness mismatch; file written on an incompatible platform")]
    Endianness,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("payload truncated or size mismatch in section '{0}'")]
    Truncated(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedSteady {
    pub demo: String,
    pub mesh_n: usize,
    pub ptype: String,
    pub u: Array1<f64>,
    pub params: ParamVec,
}

#[derive(Debug, Clone)]
pub struct SavedOrbit {
    pub demo: String,
    pub mesh_n: usize,
    pub ptype: String,
    pub orbit: HopfOrbit,
}

#[derive(Debug, Clone)]
pub enum SavedPoint {
    Steady(SavedSteady),
    Orbit(SavedOrbit),
}

impl SavedPoint {
    pub fn demo(&self) -> &str {
        match self {
            SavedPoint::Steady(s) => &s.demo,
            SavedPoint::Orbit(o) => &o.demo,
        }
    }

    pub fn mesh_n(&self) -> usize {
        match self {
            SavedPoint::Steady(s) => s.mesh_n,
            SavedPoint::Orbit(o) => o.mesh_n,
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn f64s(&mut self, vals: impl ExactSizeIterator<Item = f64>) {
        self.u64(vals.len() as u64);
        for v in vals {
            self.f64(v);
        }
    }

    fn usizes(&mut self, vals: &[usize]) {
        self.u64(vals.len() as u64);
        for &v in vals {
            self.u64(v as u64);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], SnapshotError> {
        if self.pos + n > self.buf.len() {
            return Err(SnapshotError::Truncated(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, SnapshotError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn str(&mut self, what: &'static str) -> Result<String, SnapshotError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| SnapshotError::Truncated(what))
    }

    fn f64s(&mut self, what: &'static str) -> Result<Vec<f64>, SnapshotError> {
        let n = self.u64(what)? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64(what)?);
        }
        Ok(out)
    }

    fn usizes(&mut self, what: &'static str) -> Result<Vec<usize>, SnapshotError> {
        let n = self.u64(what)? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u64(what)? as usize);
        }
        Ok(out)
    }
}

fn write_params(w: &mut Writer, p: &ParamVec) {
    w.f64s(p.values.iter().cloned());
    w.u64(p.primary as u64);
    w.usizes(&p.aux);
}

fn read_params(r: &mut Reader) -> Result<ParamVec, SnapshotError> {
    let values = r.f64s("params")?;
    let primary = r.u64("params")? as usize;
    let aux = r.usizes("params")?;
    ParamVec::new(values, primary, aux).map_err(|_| SnapshotError::Truncated("params"))
}

fn write_mat(w: &mut Writer, a: &Array2<f64>) {
    w.u64(a.nrows() as u64);
    w.u64(a.ncols() as u64);
    for col in a.columns() {
        for &v in col.iter() {
            w.f64(v);
        }
    }
}

fn read_mat(r: &mut Reader, what: &'static str) -> Result<Array2<f64>, SnapshotError> {
    let rows = r.u64(what)? as usize;
    let cols = r.u64(what)? as usize;
    let mut a = Array2::zeros((rows, cols));
    for j in 0..cols {
        for i in 0..rows {
            a[[i, j]] = r.f64(what)?;
        }
    }
    Ok(a)
}

pub fn save_point(path: &Path, point: &SavedPoint) -> Result<(), SnapshotError> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(ENDIAN_SENTINEL);
    w.u32(VERSION);
    match point {
        SavedPoint::Steady(sp) => {
            w.u8(0);
            w.str(&sp.demo);
            w.u64(sp.mesh_n as u64);
            w.str(&sp.ptype);
            write_params(&mut w, &sp.params);
            w.f64s(sp.u.iter().cloned());
        }
        SavedPoint::Orbit(op) => {
            w.u8(1);
            w.str(&op.demo);
            w.u64(op.mesh_n as u64);
            w.str(&op.ptype);
            let o = &op.orbit;
            write_params(&mut w, &o.params);
            w.f64s(o.t.iter().cloned());
            w.f64(o.period);
            write_mat(&mut w, &o.y);
            write_mat(&mut w, &o.y0d);
            w.f64(o.weights.xi);
            w.f64(o.weights.w_t);
            w.f64(o.weights.w_a);
            w.f64(o.weights.pcfac);
            w.u8(o.y0dsw);
            w.u8(u8::from(o.free_t));
            w.u64(o.x0i as u64);
            match &o.tau {
                None => w.u8(0),
                Some(t) => {
                    w.u8(1);
                    write_mat(&mut w, &t.du);
                    w.f64(t.dt_period);
                    w.f64(t.dlam);
                    w.f64s(t.dw.iter().cloned());
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&w.buf)?;
    Ok(())
}

pub fn load_point(path: &Path) -> Result<SavedPoint, SnapshotError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    if r.u32("endian")? != ENDIAN_SENTINEL {
        return Err(SnapshotError::Endianness);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    match r.u8("kind")? {
        0 => {
            let demo = r.str("demo")?;
            let mesh_n = r.u64("mesh_n")? as usize;
            let ptype = r.str("ptype")?;
            let params = read_params(&mut r)?;
            let u = Array1::from_vec(r.f64s("u")?);
            Ok(SavedPoint::Steady(SavedSteady { demo, mesh_n, ptype, u, params }))
        }
        1 => {
            let demo = r.str("demo")?;
            let mesh_n = r.u64("mesh_n")? as usize;
            let ptype = r.str("ptype")?;
            let params = read_params(&mut r)?;
            let t = r.f64s("tmesh")?;
            let period = r.f64("period")?;
            let y = read_mat(&mut r, "y")?;
            let y0d = read_mat(&mut r, "y0d")?;
            let weights = HopfWeights {
                xi: r.f64("weights")?,
                w_t: r.f64("weights")?,
                w_a: r.f64("weights")?,
                pcfac: r.f64("weights")?,
            };
            let y0dsw = r.u8("y0dsw")?;
            let free_t = r.u8("free_t")? != 0;
            let x0i = r.u64("x0i")? as usize;
            let tau = match r.u8("tau")? {
                0 => None,
                _ => {
                    let du = read_mat(&mut r, "tau")?;
                    let dt_period = r.f64("tau")?;
                    let dlam = r.f64("tau")?;
                    let dw = r.f64s("tau")?;
                    Some(HopfTangent { du, dt_period, dlam, dw })
                }
            };
            let orbit = HopfOrbit {
                y,
                t,
                period,
                params,
                y0d,
                tau,
                weights,
                y0dsw,
                free_t,
                x0i,
            };
            Ok(SavedPoint::Orbit(SavedOrbit { demo, mesh_n, ptype, orbit }))
        }
        _ => Err(SnapshotError::Truncated("kind")),
    }
}
