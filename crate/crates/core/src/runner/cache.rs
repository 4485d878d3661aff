//! Binary operator cache.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `SRPM` |
//! | 2 | format version |
//! | 1 | method (0 conv, 1 lr, 2 si, 3 slri, 4 sspi) |
//! | 1 | reserved, zero |
//! | 32 | SHA-256 of the operator-defining configuration |
//! | 4 | section count |
//!
//! Each section is a tag byte, an element-type byte (0 `u64`, 1 `f64`,
//! 2 complex `f64` stored as interleaved re, im), `u64` rows, `u64` cols and
//! `rows * cols` elements in column-major order. Conventional SRP stores no
//! sections: `H` is cheaper to rebuild than to read.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, SrpError};
use crate::evaluator::Method;
use crate::interpolator::{InterpMatrix, LowRankInterp, SparseInterp};
use crate::lr_baseline::LowRankSrp;

pub const MAGIC: &[u8; 4] = b"SRPM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SectionTag {
    SampleCounts = 1,
    Lambda = 2,
    LambdaTall = 3,
    LambdaFat = 4,
    HTall = 5,
    HFat = 6,
    SingularValues = 7,
    TailSq = 8,
    RowPtr = 9,
    ColIdx = 10,
    Values = 11,
    Shape = 12,
}

impl SectionTag {
    fn from_u8(v: u8) -> Result<Self> {
        use SectionTag::*;
        [
            SampleCounts,
            Lambda,
            LambdaTall,
            LambdaFat,
            HTall,
            HFat,
            SingularValues,
            TailSq,
            RowPtr,
            ColIdx,
            Values,
            Shape,
        ]
        .into_iter()
        .find(|t| *t as u8 == v)
        .ok_or_else(|| SrpError::Format(format!("unknown section tag {v}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    U64(Vec<u64>),
    F64(Vec<f64>),
    C64(Vec<Complex64>),
}

impl SectionData {
    fn type_code(&self) -> u8 {
        match self {
            SectionData::U64(_) => 0,
            SectionData::F64(_) => 1,
            SectionData::C64(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            SectionData::U64(v) => v.len(),
            SectionData::F64(v) => v.len(),
            SectionData::C64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub tag: SectionTag,
    pub rows: u64,
    pub cols: u64,
    pub data: SectionData,
}

impl Section {
    fn vector(tag: SectionTag, data: SectionData) -> Self {
        Self {
            tag,
            rows: data.len() as u64,
            cols: 1,
            data,
        }
    }

    fn real(tag: SectionTag, m: &DMatrix<f64>) -> Self {
        Self {
            tag,
            rows: m.nrows() as u64,
            cols: m.ncols() as u64,
            data: SectionData::F64(m.as_slice().to_vec()),
        }
    }

    fn complex(tag: SectionTag, m: &DMatrix<Complex64>) -> Self {
        Self {
            tag,
            rows: m.nrows() as u64,
            cols: m.ncols() as u64,
            data: SectionData::C64(m.as_slice().to_vec()),
        }
    }
}

/// A decoded cache: method, configuration hash and raw sections.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCache {
    pub method: Method,
    pub hash: [u8; 32],
    pub sections: Vec<Section>,
}

/// A precomputable operator in storable form.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredOperator {
    Conv,
    Lr(LowRankSrp),
    Si(InterpMatrix),
    Slri(LowRankInterp),
    Sspi(SparseInterp),
}

impl StoredOperator {
    pub fn method(&self) -> Method {
        match self {
            StoredOperator::Conv => Method::Conv,
            StoredOperator::Lr(_) => Method::Lr,
            StoredOperator::Si(_) => Method::Si,
            StoredOperator::Slri(_) => Method::Slri,
            StoredOperator::Sspi(_) => Method::Sspi,
        }
    }
}

fn method_code(m: Method) -> u8 {
    match m {
        Method::Conv => 0,
        Method::Lr => 1,
        Method::Si => 2,
        Method::Slri => 3,
        Method::Sspi => 4,
    }
}

fn method_from_code(c: u8) -> Result<Method> {
    Method::ALL
        .into_iter()
        .find(|m| method_code(*m) == c)
        .ok_or_else(|| SrpError::Format(format!("unknown method code {c}")))
}

impl OperatorCache {
    /// Packs an operator; `sample_counts` holds `N_p` for sampled methods.
    pub fn from_operator(op: &StoredOperator, sample_counts: &[usize], hash: [u8; 32]) -> Self {
        let counts = || {
            Section::vector(
                SectionTag::SampleCounts,
                SectionData::U64(sample_counts.iter().map(|&n| n as u64).collect()),
            )
        };
        let sections = match op {
            StoredOperator::Conv => vec![],
            StoredOperator::Lr(lr) => vec![
                Section::vector(
                    SectionTag::Shape,
                    SectionData::U64(vec![lr.pairs() as u64, lr.half_length() as u64]),
                ),
                Section::complex(SectionTag::HTall, lr.tall()),
                Section::complex(SectionTag::HFat, lr.fat()),
                Section::vector(
                    SectionTag::SingularValues,
                    SectionData::F64(lr.singular_values().to_vec()),
                ),
                Section::vector(SectionTag::TailSq, SectionData::F64(vec![lr.tail_sq()])),
            ],
            StoredOperator::Si(lambda) => vec![counts(), Section::real(SectionTag::Lambda, lambda.matrix())],
            StoredOperator::Slri(lr) => vec![
                counts(),
                Section::real(SectionTag::LambdaTall, lr.tall()),
                Section::real(SectionTag::LambdaFat, lr.fat()),
                Section::vector(
                    SectionTag::SingularValues,
                    SectionData::F64(lr.singular_values().to_vec()),
                ),
                Section::vector(SectionTag::TailSq, SectionData::F64(vec![lr.tail_sq()])),
            ],
            StoredOperator::Sspi(sp) => {
                let (rows, cols) = crate::interpolator::InterpolationOperator::shape(sp);
                vec![
                    counts(),
                    Section::vector(SectionTag::Shape, SectionData::U64(vec![rows as u64, cols as u64])),
                    Section::vector(
                        SectionTag::RowPtr,
                        SectionData::U64(sp.row_ptr().iter().map(|&v| v as u64).collect()),
                    ),
                    Section::vector(
                        SectionTag::ColIdx,
                        SectionData::U64(sp.col_idx().iter().map(|&v| v as u64).collect()),
                    ),
                    Section::vector(SectionTag::Values, SectionData::F64(sp.values().to_vec())),
                ]
            }
        };
        Self {
            method: op.method(),
            hash,
            sections,
        }
    }

    fn section(&self, tag: SectionTag) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.tag == tag)
            .ok_or_else(|| SrpError::Format(format!("missing section {tag:?}")))
    }

    fn u64s(&self, tag: SectionTag) -> Result<Vec<usize>> {
        match &self.section(tag)?.data {
            SectionData::U64(v) => Ok(v.iter().map(|&x| x as usize).collect()),
            _ => Err(SrpError::Format(format!("section {tag:?} is not u64"))),
        }
    }

    fn f64s(&self, tag: SectionTag) -> Result<Vec<f64>> {
        match &self.section(tag)?.data {
            SectionData::F64(v) => Ok(v.clone()),
            _ => Err(SrpError::Format(format!("section {tag:?} is not f64"))),
        }
    }

    fn real_matrix(&self, tag: SectionTag) -> Result<DMatrix<f64>> {
        let s = self.section(tag)?;
        match &s.data {
            SectionData::F64(v) => Ok(DMatrix::from_column_slice(s.rows as usize, s.cols as usize, v)),
            _ => Err(SrpError::Format(format!("section {tag:?} is not f64"))),
        }
    }

    fn complex_matrix(&self, tag: SectionTag) -> Result<DMatrix<Complex64>> {
        let s = self.section(tag)?;
        match &s.data {
            SectionData::C64(v) => Ok(DMatrix::from_column_slice(s.rows as usize, s.cols as usize, v)),
            _ => Err(SrpError::Format(format!("section {tag:?} is not complex"))),
        }
    }

    fn scalar(&self, tag: SectionTag) -> Result<f64> {
        self.f64s(tag)?
            .first()
            .copied()
            .ok_or_else(|| SrpError::Format(format!("section {tag:?} is empty")))
    }

    /// `N_p` per pair, empty for unsampled methods.
    pub fn sample_counts(&self) -> Result<Vec<usize>> {
        if self.method.is_sampled() {
            self.u64s(SectionTag::SampleCounts)
        } else {
            Ok(vec![])
        }
    }

    pub fn to_operator(&self) -> Result<StoredOperator> {
        Ok(match self.method {
            Method::Conv => StoredOperator::Conv,
            Method::Lr => {
                let shape = self.u64s(SectionTag::Shape)?;
                if shape.len() != 2 || shape[1] < 2 {
                    return Err(SrpError::Format("bad LR shape section".into()));
                }
                StoredOperator::Lr(LowRankSrp::from_factors(
                    shape[0],
                    shape[1],
                    self.complex_matrix(SectionTag::HTall)?,
                    self.complex_matrix(SectionTag::HFat)?,
                    self.f64s(SectionTag::SingularValues)?,
                    self.scalar(SectionTag::TailSq)?,
                )?)
            }
            Method::Si => StoredOperator::Si(InterpMatrix::from_matrix(self.real_matrix(SectionTag::Lambda)?)),
            Method::Slri => StoredOperator::Slri(LowRankInterp::from_factors(
                self.real_matrix(SectionTag::LambdaTall)?,
                self.real_matrix(SectionTag::LambdaFat)?,
                self.f64s(SectionTag::SingularValues)?,
                self.scalar(SectionTag::TailSq)?,
            )?),
            Method::Sspi => {
                let shape = self.u64s(SectionTag::Shape)?;
                if shape.len() != 2 {
                    return Err(SrpError::Format("bad sparse shape section".into()));
                }
                StoredOperator::Sspi(SparseInterp::from_csr(
                    shape[0],
                    shape[1],
                    self.u64s(SectionTag::RowPtr)?,
                    self.u64s(SectionTag::ColIdx)?,
                    self.f64s(SectionTag::Values)?,
                )?)
            }
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(method_code(self.method));
        out.push(0);
        out.extend_from_slice(&self.hash);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.push(s.tag as u8);
            out.push(s.data.type_code());
            out.extend_from_slice(&s.rows.to_le_bytes());
            out.extend_from_slice(&s.cols.to_le_bytes());
            match &s.data {
                SectionData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                SectionData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                SectionData::C64(v) => v.iter().for_each(|x| {
                    out.extend_from_slice(&x.re.to_le_bytes());
                    out.extend_from_slice(&x.im.to_le_bytes());
                }),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(SrpError::Format("bad magic bytes, not an SRPM cache".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(SrpError::Format(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let method = method_from_code(r.take(1)?[0])?;
        r.take(1)?;
        let hash: [u8; 32] = r.array()?;
        let count = u32::from_le_bytes(r.array()?);
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let tag = SectionTag::from_u8(r.take(1)?[0])?;
            let kind = r.take(1)?[0];
            let rows = u64::from_le_bytes(r.array()?);
            let cols = u64::from_le_bytes(r.array()?);
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= (bytes.len() as u64))
                .ok_or_else(|| SrpError::Format("section size exceeds file size".into()))? as usize;
            let data = match kind {
                0 => SectionData::U64(
                    (0..n)
                        .map(|_| r.array().map(u64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                1 => SectionData::F64(
                    (0..n)
                        .map(|_| r.array().map(f64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                2 => SectionData::C64(
                    (0..n)
                        .map(|_| {
                            let re = f64::from_le_bytes(r.array()?);
                            let im = f64::from_le_bytes(r.array()?);
                            Ok(Complex64::new(re, im))
                        })
                        .collect::<Result<_>>()?,
                ),
                other => return Err(SrpError::Format(format!("unknown element type {other}"))),
            };
            sections.push(Section { tag, rows, cols, data });
        }
        if r.pos != bytes.len() {
            return Err(SrpError::Format("trailing bytes after the last section".into()));
        }
        Ok(Self { method, hash, sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| SrpError::Format("truncated cache file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}
