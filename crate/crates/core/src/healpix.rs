//! HEALPix ring-scheme geometry.
//!
//! Ring layout, pixel centres and the four-pixel interpolation stencil are
//! computed here because the spherical harmonic transforms and the bilinear
//! projection both work ring by ring. Point-to-pixel lookup and the
//! nested/ring renumbering are delegated to `cdshealpix`.
//!
//! Angles: `theta` is colatitude in `[0, pi]`, `phi` longitude in `[0, 2 pi)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

pub fn check_nside(n_side: u32) -> Result<()> {
    if n_side == 0 || !n_side.is_power_of_two() || n_side > (1 << 29) {
        return Err(Error::InvalidNside(u64::from(n_side)));
    }
    Ok(())
}

pub fn npix(n_side: u32) -> usize {
    12 * (n_side as usize) * (n_side as usize)
}

/// `nside` for a pixel count, if the count is a valid full-sky size.
pub fn nside_for_npix(npix: usize) -> Option<u32> {
    if npix % 12 != 0 {
        return None;
    }
    let n2 = npix / 12;
    let n = (n2 as f64).sqrt().round() as usize;
    (n * n == n2 && n > 0 && n.is_power_of_two()).then_some(n as u32)
}

pub fn n_rings(n_side: u32) -> usize {
    4 * n_side as usize - 1
}

/// Geometry of one iso-latitude ring (rings numbered `1..=4 nside - 1` from north).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingInfo {
    pub first_pixel: usize,
    pub n_pixels: usize,
    pub z: f64,
    pub theta: f64,
    /// Longitude of the first pixel centre in the ring.
    pub phi0: f64,
}

impl RingInfo {
    pub fn dphi(&self) -> f64 {
        TAU / self.n_pixels as f64
    }

    pub fn phi(&self, j: usize) -> f64 {
        self.phi0 + j as f64 * self.dphi()
    }

    /// True when pixel centres sit at half-integer multiples of `dphi`.
    pub fn shifted(&self) -> bool {
        self.phi0 != 0.0
    }
}

pub fn ring_info(n_side: u32, ring: usize) -> RingInfo {
    let ns = n_side as usize;
    let nsf = n_side as f64;
    debug_assert!(ring >= 1 && ring < 4 * ns);
    let npix = npix(n_side);
    let (first_pixel, n_pixels, z, shifted) = if ring < ns {
        let r = ring as f64;
        (2 * ring * (ring - 1), 4 * ring, 1.0 - r * r / (3.0 * nsf * nsf), true)
    } else if ring <= 3 * ns {
        let first = 2 * ns * (ns - 1) + (ring - ns) * 4 * ns;
        let z = 4.0 / 3.0 - 2.0 * ring as f64 / (3.0 * nsf);
        (first, 4 * ns, z, (ring + ns) % 2 == 0)
    } else {
        let south = 4 * ns - ring;
        let r = south as f64;
        (
            npix - 2 * south * (south + 1),
            4 * south,
            -(1.0 - r * r / (3.0 * nsf * nsf)),
            true,
        )
    };
    let phi0 = if shifted {
        PI / n_pixels as f64
    } else {
        0.0
    };
    RingInfo {
        first_pixel,
        n_pixels,
        z,
        theta: z.clamp(-1.0, 1.0).acos(),
        phi0,
    }
}

pub fn rings(n_side: u32) -> Vec<RingInfo> {
    (1..=n_rings(n_side)).map(|r| ring_info(n_side, r)).collect()
}

fn isqrt(v: usize) -> usize {
    let mut r = (v as f64).sqrt() as usize;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// Ring number (1-based) holding a ring-ordered pixel.
pub fn ring_of_pixel(n_side: u32, pix: usize) -> usize {
    let ns = n_side as usize;
    let ncap = 2 * ns * (ns - 1);
    let npix = npix(n_side);
    if pix < ncap {
        (1 + isqrt(1 + 2 * pix)) >> 1
    } else if pix < npix - ncap {
        (pix - ncap) / (4 * ns) + ns
    } else {
        let ip = npix - pix;
        4 * ns - ((1 + isqrt(2 * ip - 1)) >> 1)
    }
}

/// Centre `(theta, phi)` of a ring-ordered pixel.
pub fn pix2ang(n_side: u32, pix: usize) -> (f64, f64) {
    let info = ring_info(n_side, ring_of_pixel(n_side, pix));
    (info.theta, info.phi(pix - info.first_pixel))
}

/// Ring-ordered pixel containing the direction `(theta, phi)`.
pub fn ang2pix(n_side: u32, theta: f64, phi: f64) -> usize {
    let lat = FRAC_PI_2 - theta;
    cdshealpix::ring::hash(n_side, phi.rem_euclid(TAU), lat) as usize
}

pub fn nest2ring(n_side: u32, pix: usize) -> usize {
    let depth = cdshealpix::depth(n_side);
    cdshealpix::nested::get(depth).to_ring(pix as u64) as usize
}

pub fn ring2nest(n_side: u32, pix: usize) -> usize {
    let depth = cdshealpix::depth(n_side);
    cdshealpix::nested::get(depth).from_ring(pix as u64) as usize
}

/// Index (1-based) of the northernmost ring whose `z` is at least `z`,
/// or 0 when `z` lies above the first ring.
fn ring_above(n_side: u32, z: f64) -> usize {
    let nsf = n_side as f64;
    let az = z.abs();
    if az <= 2.0 / 3.0 {
        return (nsf * (2.0 - 1.5 * z)) as usize;
    }
    let iring = (nsf * (3.0 * (1.0 - az)).sqrt()) as usize;
    if z > 0.0 {
        iring
    } else {
        4 * n_side as usize - iring - 1
    }
}

fn ring_pair(info: &RingInfo, phi: f64) -> ([usize; 2], f64) {
    let n = info.n_pixels as isize;
    let dphi = info.dphi();
    let shift = if info.shifted() { 0.5 } else { 0.0 };
    let tmp = phi / dphi - shift;
    let i1 = tmp.floor() as isize;
    let w1 = (phi - (i1 as f64 + shift) * dphi) / dphi;
    let i2 = i1 + 1;
    let wrap = |i: isize| i.rem_euclid(n) as usize;
    (
        [info.first_pixel + wrap(i1), info.first_pixel + wrap(i2)],
        w1,
    )
}

/// Four ring-ordered pixels and weights interpolating a map at `(theta, phi)`:
/// linear in longitude within the two bracketing rings, then linear in
/// colatitude between them. Above the first (below the last) ring the
/// missing ring is replaced by the polar mean of the nearest ring.
pub fn interp_weights(n_side: u32, theta: f64, phi: f64) -> ([usize; 4], [f64; 4]) {
    let phi = phi.rem_euclid(TAU);
    let z = theta.cos();
    let nr = 4 * n_side as usize;
    let npix = npix(n_side);
    let ir1 = ring_above(n_side, z);
    let ir2 = ir1 + 1;
    let mut pix = [0usize; 4];
    let mut wgt = [0f64; 4];
    let mut theta1 = 0.0;
    let mut theta2 = 0.0;
    if ir1 > 0 {
        let info = ring_info(n_side, ir1);
        theta1 = info.theta;
        let (p, w1) = ring_pair(&info, phi);
        pix[0] = p[0];
        pix[1] = p[1];
        wgt[0] = 1.0 - w1;
        wgt[1] = w1;
    }
    if ir2 < nr {
        let info = ring_info(n_side, ir2);
        theta2 = info.theta;
        let (p, w1) = ring_pair(&info, phi);
        pix[2] = p[0];
        pix[3] = p[1];
        wgt[2] = 1.0 - w1;
        wgt[3] = w1;
    }
    if ir1 == 0 {
        let wtheta = theta / theta2;
        wgt[2] *= wtheta;
        wgt[3] *= wtheta;
        let fac = (1.0 - wtheta) * 0.25;
        wgt[0] = fac;
        wgt[1] = fac;
        wgt[2] += fac;
        wgt[3] += fac;
        pix[0] = (pix[2] + 2) & 3;
        pix[1] = (pix[3] + 2) & 3;
    } else if ir2 == nr {
        let wtheta = (theta - theta1) / (PI - theta1);
        wgt[0] *= 1.0 - wtheta;
        wgt[1] *= 1.0 - wtheta;
        let fac = wtheta * 0.25;
        wgt[0] += fac;
        wgt[1] += fac;
        wgt[2] = fac;
        wgt[3] = fac;
        pix[2] = ((pix[0] + 2) & 3) + npix - 4;
        pix[3] = ((pix[1] + 2) & 3) + npix - 4;
    } else {
        let wtheta = (theta - theta1) / (theta2 - theta1);
        wgt[0] *= 1.0 - wtheta;
        wgt[1] *= 1.0 - wtheta;
        wgt[2] *= wtheta;
        wgt[3] *= wtheta;
    }
    (pix, wgt)
}
