//! ZYGF binary container.
//!
//! Layout: magic `ZYGF`, then little-endian `u32` version, kind, ndim, the
//! per-axis sizes, `f64` half width, a kind-specific header and the `f64`
//! payload of every field in declared order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{multi_indices, FormField, Frame, GridSpec, MatrixField, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"ZYGF";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Zygf<T> {
    Scalar(ScalarField<T>),
    Form(FormField<T>),
    Frame(Frame<T>),
    Matrix(MatrixField<T>),
}

impl<T: Real> Zygf<T> {
    fn kind(&self) -> u32 {
        match self {
            Zygf::Scalar(_) => 0,
            Zygf::Form(_) => 1,
            Zygf::Frame(_) => 2,
            Zygf::Matrix(_) => 3,
        }
    }

    fn spec(&self) -> &GridSpec {
        match self {
            Zygf::Scalar(f) => f.spec(),
            Zygf::Form(f) => f.spec(),
            Zygf::Frame(f) => f.spec(),
            Zygf::Matrix(m) => m.spec(),
        }
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_field<T: Real>(w: &mut impl Write, f: &ScalarField<T>) -> Result<()> {
    for v in f.data() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn write_zygf<T: Real>(path: impl AsRef<Path>, obj: &Zygf<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let spec = obj.spec();
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, obj.kind())?;
    put_u32(&mut w, spec.ndim() as u32)?;
    for &n in spec.sizes() {
        put_u32(&mut w, n as u32)?;
    }
    w.write_all(&spec.half_width().to_le_bytes())?;
    match obj {
        Zygf::Scalar(f) => put_field(&mut w, f)?,
        Zygf::Form(form) => {
            put_u32(&mut w, form.degree() as u32)?;
            put_u32(&mut w, form.components().len() as u32)?;
            for idx in form.indices() {
                for i in idx {
                    put_u32(&mut w, i as u32)?;
                }
            }
            for c in form.components() {
                put_field(&mut w, c)?;
            }
        }
        Zygf::Frame(frame) => {
            put_u32(&mut w, frame.q() as u32)?;
            put_u32(&mut w, frame.coeffs().is_some() as u32)?;
            for v in frame.fields() {
                for c in v.components() {
                    put_field(&mut w, c)?;
                }
            }
            for c in frame.coeffs().unwrap_or(&[]) {
                put_field(&mut w, c)?;
            }
        }
        Zygf::Matrix(m) => {
            put_u32(&mut w, m.rows() as u32)?;
            put_u32(&mut w, m.cols() as u32)?;
            for e in m.entries() {
                put_field(&mut w, e)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0; 4];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0; 8];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(f64::from_le_bytes(b))
    }

    fn field<T: Real>(&mut self, spec: &GridSpec) -> Result<ScalarField<T>> {
        let mut buf = vec![0u8; 8 * spec.len()];
        self.inner.read_exact(&mut buf).map_err(truncated)?;
        let data = buf.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        ScalarField::new(spec.clone(), data)
    }

    fn fields<T: Real>(&mut self, spec: &GridSpec, count: usize) -> Result<Vec<ScalarField<T>>> {
        (0..count).map(|_| self.field(spec)).collect()
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated payload".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_zygf<T: Real>(path: impl AsRef<Path>) -> Result<Zygf<T>> {
    let mut r = Reader { inner: BufReader::new(File::open(path)?) };
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = r.u32()?;
    let ndim = r.u32()? as usize;
    if !(1..=3).contains(&ndim) {
        return Err(Error::Format(format!("ndim {ndim}")));
    }
    let sizes = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let spec = GridSpec::new(&sizes, r.f64()?)?;
    let obj = match kind {
        0 => Zygf::Scalar(r.field(&spec)?),
        1 => {
            let degree = r.u32()? as usize;
            let count = r.u32()? as usize;
            let mut declared = Vec::with_capacity(count);
            for _ in 0..count {
                declared.push((0..degree).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?);
            }
            if declared != multi_indices(ndim, degree) {
                return Err(Error::Format("form multi-indices out of canonical order".into()));
            }
            Zygf::Form(FormField::new(degree, r.fields(&spec, count)?)?)
        }
        2 => {
            let q = r.u32()? as usize;
            let has_c = r.u32()? != 0;
            let vfs = (0..q)
                .map(|_| r.fields(&spec, ndim).and_then(VectorField::new))
                .collect::<Result<Vec<_>>>()?;
            let c = if has_c { Some(r.fields(&spec, q * q * q)?) } else { None };
            Zygf::Frame(Frame::new(vfs, c)?)
        }
        3 => {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            Zygf::Matrix(MatrixField::new(rows, cols, r.fields(&spec, rows * cols)?)?)
        }
        k => return Err(Error::Format(format!("unknown kind {k}"))),
    };
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(obj: &Zygf<f64>) -> Zygf<f64> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.zygf");
        write_zygf(&p, obj).unwrap();
        read_zygf(&p).unwrap()
    }

    #[test]
    fn zero_field_roundtrip() {
        let g = GridSpec::cube(2, 64, 2.0).unwrap();
        let z = Zygf::Scalar(ScalarField::zeros(&g));
        assert_eq!(roundtrip(&z), z);
    }

    #[test]
    fn one_form_keeps_structure() {
        let g = GridSpec::cube(2, 16, 2.0).unwrap();
        let w = FormField::new(
            1,
            vec![ScalarField::sample(&g, |x| x[0]).unwrap(), ScalarField::sample(&g, |x| x[1] * x[1]).unwrap()],
        )
        .unwrap();
        match roundtrip(&Zygf::Form(w.clone())) {
            Zygf::Form(r) => {
                assert_eq!(r.degree(), 1);
                assert_eq!(r.components().len(), 2);
                assert_eq!(r, w);
            }
            other => panic!("wrong kind {other:?}"),
        }
    }

    #[test]
    fn sine_is_bit_exact() {
        let g = GridSpec::cube(1, 256, 2.0).unwrap();
        let f = ScalarField::sample(&g, |x| (2.0 * std::f64::consts::PI * x[0] / 2.0).sin()).unwrap();
        let Zygf::Scalar(r) = roundtrip(&Zygf::Scalar(f.clone())) else { panic!() };
        let bits = |s: &ScalarField<f64>| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r), bits(&f));
    }

    #[test]
    fn frame_and_matrix_roundtrip() {
        let g = GridSpec::cube(2, 16, 1.5).unwrap();
        let y = VectorField::sample(&g, |x| vec![x[0] * x[1].exp(), 1.0]).unwrap();
        let mut c = vec![ScalarField::zeros(&g); 8];
        let e = ScalarField::sample(&g, |x| x[1].exp()).unwrap();
        let at = |i: usize, j: usize| (i * 2 + j) * 2;
        c[at(0, 1)] = e.clone();
        c[at(1, 0)] = e.scale(-1.0);
        let fr = Zygf::Frame(Frame::new(vec![VectorField::coordinate(&g, 0), y], Some(c)).unwrap());
        assert_eq!(roundtrip(&fr), fr);
        let m = Zygf::Matrix(MatrixField::new(1, 3, vec![e.clone(), e.scale(2.0), e.scale(0.5)]).unwrap());
        assert_eq!(roundtrip(&m), m);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.zygf");
        std::fs::write(&p, b"ZYGX\x01\0\0\0").unwrap();
        assert!(matches!(read_zygf::<f64>(&p), Err(Error::Format(_))));
        let g = GridSpec::cube(1, 16, 2.0).unwrap();
        write_zygf(&p, &Zygf::Scalar(ScalarField::<f64>::zeros(&g))).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_zygf::<f64>(&p), Err(Error::Format(_))));
        assert!(matches!(read_zygf::<f64>(dir.path().join("missing")), Err(Error::Io(_))));
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.zygf");
        let g = GridSpec::new(&[16, 32], 2.0).unwrap();
        write_zygf(&p, &Zygf::Matrix(MatrixField::<f64>::zeros(&g, 2, 3))).unwrap();
        let b = std::fs::read(&p).unwrap();
        let u = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        assert_eq!(&b[..4], b"ZYGF");
        assert_eq!((u(4), u(8), u(12), u(16), u(20)), (1, 3, 2, 16, 32));
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 2.0);
        assert_eq!((u(32), u(36)), (2, 3));
        assert_eq!(b.len(), 40 + 6 * 16 * 32 * 8);
    }
}
