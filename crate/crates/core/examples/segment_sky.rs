//! Cut a masked sky into flat patches, store them as a bundle and put the
//! sky back together.
//!
//! Usage: `cargo run --release --example segment_sky [bundle_dir]`

use cosmovae::grf::{sample_alm, synthesize, PowerSpectrum};
use cosmovae::sphere_data::{
    load_bundle, make_grid, reassemble, save_bundle, segment, synthetic::galactic_mask, PatchSpec, SegmentOptions,
};

fn main() -> cosmovae::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("cosmovae-bundle"), Into::into);
    let cl = PowerSpectrum::from_fn(32, |l| 1.0 / ((l * (l + 1)) as f64 + 1.0))?;
    let map = synthesize(&sample_alm(&cl, 1), 32, None)?;
    let mask = galactic_mask(32, 10.0, 12, 4.0, 2)?;
    println!("{} of {} pixels masked", mask.n_holes(), mask.values().len());

    let template = PatchSpec {
        height_px: 32,
        width_px: 32,
        ..PatchSpec::default()
    };
    let grid = make_grid(10.0, 20.0, &template)?;
    let (train, test) = segment(&map, &mask, &grid, SegmentOptions::default())?;
    println!("{} patches: {} complete, {} with holes", grid.len(), train.len(), test.len());
    if let Some(p) = test.first() {
        println!(
            "patch {} at ({:.0}, {:.0}) deg has {} hole pixels",
            p.spec.patch_id,
            p.spec.center_lat_deg,
            p.spec.center_lon_deg,
            p.n_holes()
        );
    }

    save_bundle(&dir, &grid, &train, &test)?;
    let bundle = load_bundle(&dir)?;
    println!("bundle at {} reloaded with {} + {} patches", dir.display(), bundle.train.len(), bundle.test.len());

    // hole pixels take the mean of the patch pixels that land on them
    let back = reassemble(&map, &bundle.test, &bundle.grid)?;
    let changed: Vec<usize> = (0..map.npix()).filter(|&p| back.values()[p] != map.values()[p]).collect();
    let inside = changed.iter().all(|&p| mask.is_hole(p));
    println!("reassembly rewrote {} pixels, all inside the mask: {inside}", changed.len());
    Ok(())
}
