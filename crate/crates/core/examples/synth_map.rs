//! Draw a Gaussian random field on the sphere from a power spectrum, then
//! recover the spectrum from the map.
//!
//! Usage: `cargo run --release --example synth_map [out.smap]`

use cosmovae::grf::{analyze, estimate_spectrum, sample_alm, synthesize, FieldConstants, PowerSpectrum};
use cosmovae::sphere_data::{save_map, MapFormat};

fn main() -> cosmovae::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("synth.smap").display().to_string());
    let cl = PowerSpectrum::from_fn(32, |l| 1e-9 / ((l * (l + 1)) as f64 + 1.0))?;
    let alm = sample_alm(&cl, 42);

    // dimensionless field, then the same draw in kelvin around the mean CMB temperature
    let map = synthesize(&alm, 32, None)?;
    let kelvin = synthesize(&alm, 32, Some(FieldConstants::new(2.7255)?))?;
    let (lo, hi) = kelvin.valid_range().expect("map has valid pixels");
    println!("nside 32, {} pixels, temperature range {lo:.6} K .. {hi:.6} K", map.npix());

    let est = estimate_spectrum(&analyze(&map, 32)?);
    println!("{:>4} {:>12} {:>12}", "l", "input C_l", "recovered");
    for l in (2..=32).step_by(5) {
        println!("{l:>4} {:>12.3e} {:>12.3e}", cl.get(l), est.get(l));
    }
    save_map(&out, &kelvin, MapFormat::Raw)?;
    println!("wrote {out}");
    Ok(())
}
