//! Saleh-Valenzuela channel synthesis.
//!
//! BSs carry horizontal uniform linear arrays along the x axis. Each RIS is a
//! uniform planar array in the x-z plane. Planar responses are enumerated with
//! the horizontal index fastest: element `n_y * N_x + n_x`. This ordering is
//! fixed for the whole crate, including channel dumps.
//!
//! The first path of every link is line-of-sight and uses the geometric angles
//! between the two endpoints; the remaining paths draw every angle uniformly
//! from `[-pi/2, pi/2]`. The azimuth/elevation pair of a planar response is
//! `(psi, sigma)` with `sin(psi) sin(sigma) = u_x` and `cos(sigma) = u_z`,
//! so geometric elevations range over `[0, pi]`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rand::Rng;

use crate::linalg::{cscg, CMat, CVec, C64, ZERO};
use crate::rng::{stream, Stream};
use crate::scenario::{LinkKind, Position, Scenario, SystemConfig};
use crate::{Error, Result};

/// ULA response `exp(j pi n sin psi) / sqrt(len)`.
pub fn ula_response(psi: f64, len: usize) -> Result<CVec> {
    if len == 0 {
        return Err(Error::DimensionMismatch("ULA needs at least one element".into()));
    }
    let scale = 1.0 / (len as f64).sqrt();
    let s = psi.sin();
    Ok(CVec::from_fn(len, |n, _| C64::from_polar(scale, PI * n as f64 * s)))
}

/// UPA response `exp(j pi (n_x sin psi sin sigma + n_y cos sigma)) / sqrt(N_x N_y)`,
/// horizontal index fastest.
pub fn upa_response(psi: f64, sigma: f64, nx: usize, ny: usize) -> Result<CVec> {
    if nx == 0 || ny == 0 {
        return Err(Error::DimensionMismatch("UPA needs at least one element per axis".into()));
    }
    let scale = 1.0 / ((nx * ny) as f64).sqrt();
    let hx = psi.sin() * sigma.sin();
    let hy = sigma.cos();
    Ok(CVec::from_fn(nx * ny, |i, _| {
        let (x, y) = ((i % nx) as f64, (i / nx) as f64);
        C64::from_polar(scale, PI * (x * hx + y * hy))
    }))
}

/// Planar factorisation `N = N_x N_y` with `N_x` the smallest divisor of `N`
/// not below `sqrt(N)`.
pub fn upa_shape(n: usize) -> (usize, usize) {
    let root = (n as f64).sqrt();
    let nx = (1..=n).find(|d| n.is_multiple_of(*d) && *d as f64 >= root - 1e-9).unwrap_or(n);
    (nx, n / nx)
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: C64,
    /// Azimuth at the receiving array (or the ULA angle of a direct link).
    pub azimuth: f64,
    /// Elevation at a planar array.
    pub elevation: f64,
    /// Azimuth of departure at the BS for BS-RIS links.
    pub departure: f64,
}

impl PathParams {
    fn check(&self) -> Result<()> {
        let finite = self.gain.re.is_finite() && self.gain.im.is_finite();
        let angles = [self.azimuth, self.elevation, self.departure];
        if !finite || angles.iter().any(|a| !a.is_finite() || a.abs() > PI) {
            return Err(Error::NonFinite("path parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// BS to RIS: `N x N_t` with a planar receive and linear transmit response.
    G { ris_shape: (usize, usize), bs_antennas: usize },
    /// RIS to UE: `N x 1` planar response.
    V { ris_shape: (usize, usize) },
    /// BS to UE: `N_t x 1` linear response.
    H { bs_antennas: usize },
}

impl ChannelKind {
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            ChannelKind::G { ris_shape, bs_antennas } => (ris_shape.0 * ris_shape.1, bs_antennas),
            ChannelKind::V { ris_shape } => (ris_shape.0 * ris_shape.1, 1),
            ChannelKind::H { bs_antennas } => (bs_antennas, 1),
        }
    }
}

/// Sum of path terms scaled by `sqrt(dim product / path count)`.
pub fn draw_sv_channel(kind: ChannelKind, paths: &[PathParams]) -> Result<CMat> {
    if paths.is_empty() {
        return Err(Error::EmptyPaths);
    }
    let (rows, cols) = kind.shape();
    let prefactor = ((rows * cols) as f64 / paths.len() as f64).sqrt();
    let mut out = CMat::zeros(rows, cols);
    for p in paths {
        p.check()?;
        let coef = p.gain * prefactor;
        match kind {
            ChannelKind::G { ris_shape: (nx, ny), bs_antennas } => {
                let rx = upa_response(p.azimuth, p.elevation, nx, ny)?;
                let tx = ula_response(p.departure, bs_antennas)?;
                out += (rx * tx.adjoint()) * coef;
            }
            ChannelKind::V { ris_shape: (nx, ny) } => {
                out += upa_response(p.azimuth, p.elevation, nx, ny)? * coef;
            }
            ChannelKind::H { bs_antennas } => {
                out += ula_response(p.azimuth, bs_antennas)? * coef;
            }
        }
    }
    Ok(out)
}

fn unit_direction(from: &Position, to: &Position) -> [f64; 3] {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    d.map(|x| x / n)
}

fn linear_angle(u: [f64; 3]) -> f64 {
    u[0].clamp(-1.0, 1.0).asin()
}

fn planar_angles(u: [f64; 3]) -> (f64, f64) {
    let sigma = u[2].clamp(-1.0, 1.0).acos();
    let s = sigma.sin();
    let psi = if s > 0.0 { (u[0] / s).clamp(-1.0, 1.0).asin() } else { 0.0 };
    (psi, sigma)
}

fn draw_paths<R: Rng>(rng: &mut R, count: usize, variance: f64, los: PathParams) -> Vec<PathParams> {
    let mut out = Vec::with_capacity(count);
    for l in 0..count {
        let gain = cscg(rng, variance);
        if l == 0 {
            out.push(PathParams { gain, ..los });
        } else {
            out.push(PathParams {
                gain,
                azimuth: rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
                elevation: rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
                departure: rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
            });
        }
    }
    out
}

/// All channel realisations of one scenario draw plus the stacked forms.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub num_bs: usize,
    pub num_ris: usize,
    pub num_ues: usize,
    pub ris_elements: usize,
    pub bs_antennas: usize,
    g: Vec<CMat>,
    v: Vec<CVec>,
    h: Vec<CVec>,
    g_stack: Vec<CMat>,
    v_stack: Vec<CVec>,
    cascade: Vec<CMat>,
}

impl ChannelSet {
    /// Builds the set from per-link blocks: `g[b][r]` is `N x N_t`, `v[r][k]`
    /// has length `N`, `h[b][k]` has length `N_t`.
    pub fn from_parts(g: Vec<Vec<CMat>>, v: Vec<Vec<CVec>>, h: Vec<Vec<CVec>>) -> Result<Self> {
        let mismatch = |m: &str| Error::DimensionMismatch(m.to_string());
        let num_bs = g.len();
        let num_ris = v.len();
        if num_bs == 0 || num_ris == 0 || h.len() != num_bs {
            return Err(mismatch("need at least one BS and RIS with matching tables"));
        }
        let num_ues = v[0].len();
        let ris_elements = g[0].first().map(|m| m.nrows()).ok_or_else(|| mismatch("empty G row"))?;
        let bs_antennas = g[0][0].ncols();
        if num_ues == 0 || ris_elements == 0 || bs_antennas == 0 {
            return Err(mismatch("zero-sized channel"));
        }
        for row in &g {
            if row.len() != num_ris || row.iter().any(|m| m.shape() != (ris_elements, bs_antennas)) {
                return Err(mismatch("G blocks must all be N x N_t"));
            }
        }
        for row in &v {
            if row.len() != num_ues || row.iter().any(|x| x.len() != ris_elements) {
                return Err(mismatch("v blocks must all have length N"));
            }
        }
        for row in &h {
            if row.len() != num_ues || row.iter().any(|x| x.len() != bs_antennas) {
                return Err(mismatch("h blocks must all have length N_t"));
            }
        }
        let all = g.iter().flatten().flat_map(|m| m.iter())
            .chain(v.iter().flatten().flat_map(|x| x.iter()))
            .chain(h.iter().flatten().flat_map(|x| x.iter()));
        if all.into_iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("channel entries"));
        }

        let nr = ris_elements * num_ris;
        let g_stack: Vec<CMat> = g
            .iter()
            .map(|row| {
                let mut m = CMat::zeros(nr, bs_antennas);
                for (r, block) in row.iter().enumerate() {
                    m.view_mut((r * ris_elements, 0), (ris_elements, bs_antennas)).copy_from(block);
                }
                m
            })
            .collect();
        let v_stack: Vec<CVec> = (0..num_ues)
            .map(|k| {
                let mut x = CVec::zeros(nr);
                for (r, row) in v.iter().enumerate() {
                    x.rows_mut(r * ris_elements, ris_elements).copy_from(&row[k]);
                }
                x
            })
            .collect();
        let mut cascade = Vec::with_capacity(num_bs * num_ues);
        for gb in &g_stack {
            for vk in &v_stack {
                let mut c = gb.clone();
                for (i, mut row) in c.row_iter_mut().enumerate() {
                    row *= vk[i].conj();
                }
                cascade.push(c);
            }
        }
        Ok(Self {
            num_bs,
            num_ris,
            num_ues,
            ris_elements,
            bs_antennas,
            g: g.into_iter().flatten().collect(),
            v: v.into_iter().flatten().collect(),
            h: h.into_iter().flatten().collect(),
            g_stack,
            v_stack,
            cascade,
        })
    }

    pub fn phase_len(&self) -> usize {
        self.ris_elements * self.num_ris
    }

    pub fn g(&self, b: usize, r: usize) -> &CMat {
        &self.g[b * self.num_ris + r]
    }

    pub fn v(&self, r: usize, k: usize) -> &CVec {
        &self.v[r * self.num_ues + k]
    }

    pub fn h(&self, b: usize, k: usize) -> &CVec {
        &self.h[b * self.num_ues + k]
    }

    /// `G_b`: the `NR x N_t` vertical stack over RISs.
    pub fn g_stack(&self, b: usize) -> &CMat {
        &self.g_stack[b]
    }

    /// Diagonal of the block-diagonal `V_k`.
    pub fn v_diag(&self, k: usize) -> &CVec {
        &self.v_stack[k]
    }

    /// `V_k^H G_b`, so that `h_hat^H = h^H + theta^H (V_k^H G_b)`.
    pub fn cascade(&self, b: usize, k: usize) -> &CMat {
        &self.cascade[b * self.num_ues + k]
    }

    /// Composite channel `h_hat_{b,k}` without feasibility checks.
    pub fn composite(&self, b: usize, k: usize, theta: &CVec) -> CVec {
        self.h(b, k) + self.cascade(b, k).ad_mul(theta)
    }

    /// `N_t x K` matrix with columns `h_hat_{b,k}`.
    pub fn composite_matrix(&self, b: usize, theta: &CVec) -> CMat {
        let mut m = CMat::zeros(self.bs_antennas, self.num_ues);
        for k in 0..self.num_ues {
            m.set_column(k, &self.composite(b, k, theta));
        }
        m
    }

    /// Writes every entry as CSV: `kind,b,r,k,row,col,re,im`, blank where an
    /// index does not apply. Indices are 0-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Precondition(format!("channel dump: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "b", "r", "k", "row", "col", "re", "im"]).map_err(io)?;
        let idx = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut emit = |kind: &str, b, r, k, m: &CMat| -> Result<()> {
            for col in 0..m.ncols() {
                for row in 0..m.nrows() {
                    let z = m[(row, col)];
                    w.write_record([
                        kind.to_string(),
                        idx(b),
                        idx(r),
                        idx(k),
                        row.to_string(),
                        col.to_string(),
                        format!("{:e}", z.re),
                        format!("{:e}", z.im),
                    ])
                    .map_err(io)?;
                }
            }
            Ok(())
        };
        for b in 0..self.num_bs {
            for r in 0..self.num_ris {
                emit("G", Some(b), Some(r), None, self.g(b, r))?;
            }
        }
        for r in 0..self.num_ris {
            for k in 0..self.num_ues {
                emit("v", None, Some(r), Some(k), &CMat::from_column_slice(self.ris_elements, 1, self.v(r, k).as_slice()))?;
            }
        }
        for b in 0..self.num_bs {
            for k in 0..self.num_ues {
                emit("h", Some(b), None, Some(k), &CMat::from_column_slice(self.bs_antennas, 1, self.h(b, k).as_slice()))?;
            }
        }
        w.flush().map_err(|e| Error::Precondition(format!("channel dump: {e}")))?;
        Ok(())
    }
}

/// Composite channel `h_hat` with `h_hat^H = h^H + theta^H V^H G`, where `V`
/// is given by its diagonal.
pub fn composite_channel(h: &CVec, g_stack: &CMat, v_diag: &CVec, theta: &CVec) -> Result<CVec> {
    let nr = g_stack.nrows();
    if h.len() != g_stack.ncols() || v_diag.len() != nr || theta.len() != nr {
        return Err(Error::DimensionMismatch(format!(
            "h {} / G {}x{} / V {} / theta {}",
            h.len(),
            nr,
            g_stack.ncols(),
            v_diag.len(),
            theta.len()
        )));
    }
    crate::linalg::check_unit_modulus(theta, 1e-9)?;
    let reflected = v_diag.component_mul(theta);
    Ok(h + g_stack.ad_mul(&reflected))
}

/// Draws every channel of the scenario from the config seed.
pub fn draw_channels(config: &SystemConfig, scenario: &Scenario) -> Result<ChannelSet> {
    config.validate()?;
    let shape = upa_shape(config.ris_elements);
    let nt = config.bs_antennas;
    let paths = config.paths_per_channel;

    let mut g = Vec::with_capacity(config.num_bs);
    for (b, bs) in scenario.bs_positions.iter().enumerate() {
        let mut row = Vec::with_capacity(config.num_ris);
        for (r, ris) in scenario.ris_positions.iter().enumerate() {
            let mut rng = stream(config.seed, Stream::ChannelG, b, r, 0);
            let variance = scenario.link_gain(bs, ris, LinkKind::BsRis)?;
            let (azimuth, elevation) = planar_angles(unit_direction(ris, bs));
            let departure = linear_angle(unit_direction(bs, ris));
            let los = PathParams { gain: ZERO, azimuth, elevation, departure };
            let p = draw_paths(&mut rng, paths, variance, los);
            row.push(draw_sv_channel(ChannelKind::G { ris_shape: shape, bs_antennas: nt }, &p)?);
        }
        g.push(row);
    }

    let mut v = Vec::with_capacity(config.num_ris);
    for (r, ris) in scenario.ris_positions.iter().enumerate() {
        let mut row = Vec::with_capacity(config.num_ues);
        for (k, ue) in scenario.ue_positions.iter().enumerate() {
            let mut rng = stream(config.seed, Stream::ChannelV, r, k, 0);
            let variance = scenario.link_gain(ris, ue, LinkKind::RisUe)?;
            let (azimuth, elevation) = planar_angles(unit_direction(ris, ue));
            let los = PathParams { gain: ZERO, azimuth, elevation, departure: 0.0 };
            let p = draw_paths(&mut rng, paths, variance, los);
            row.push(draw_sv_channel(ChannelKind::V { ris_shape: shape }, &p)?.column(0).into_owned());
        }
        v.push(row);
    }

    let mut h = Vec::with_capacity(config.num_bs);
    for (b, bs) in scenario.bs_positions.iter().enumerate() {
        let mut row = Vec::with_capacity(config.num_ues);
        for (k, ue) in scenario.ue_positions.iter().enumerate() {
            let mut rng = stream(config.seed, Stream::ChannelH, b, k, 0);
            let variance = scenario.link_gain(bs, ue, LinkKind::BsUe)?;
            let azimuth = linear_angle(unit_direction(bs, ue));
            let los = PathParams { gain: ZERO, azimuth, elevation: 0.0, departure: 0.0 };
            let p = draw_paths(&mut rng, paths, variance, los);
            row.push(draw_sv_channel(ChannelKind::H { bs_antennas: nt }, &p)?.column(0).into_owned());
        }
        h.push(row);
    }

    ChannelSet::from_parts(g, v, h)
}
