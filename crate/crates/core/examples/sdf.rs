//! Signed distance fields: exact transform, soft occupancy, max-composition
//! and the VGF file format.

use vcdiff::voxel::{compose_context, occupancy, sdf_from_mask, soft_volume_ml, threshold, vgf, volume_ml, BinaryMask, SdfConfig};

fn ball(dims: [usize; 3], c: [f64; 3], r: f64) -> BinaryMask {
    let mut m = BinaryMask::empty(dims, 10.0).unwrap();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                m.set(x, y, z, d2 <= r * r);
            }
        }
    }
    m
}

fn main() -> vcdiff::Result<()> {
    let cfg = SdfConfig::default();
    let dims = [16, 16, 16];
    let a = ball(dims, [5.0, 8.0, 8.0], 3.5);
    let b = ball(dims, [11.0, 8.0, 8.0], 3.0);
    let (sa, sb) = (sdf_from_mask(&a, &cfg), sdf_from_mask(&b, &cfg));
    println!("centre of a: S = {:.3}, far corner: S = {:.3}", sa.get(5, 8, 8), sa.get(15, 15, 15));
    println!("hard volume {:.1} mL, soft volume {:.1} mL", volume_ml(&a), soft_volume_ml(&occupancy(&sa, &cfg)));

    let ctx = compose_context(&[&sa, &sb], dims, 10.0, &cfg)?;
    assert_eq!(threshold(&ctx), a.union(&b)?);
    println!("max-composition thresholds to the union ({} voxels)", threshold(&ctx).count());

    let path = std::env::temp_dir().join("vcdiff-example.vgf");
    vgf::write_scalar(&path, &ctx)?;
    let back = vgf::read_scalar(&path)?;
    println!("VGF round trip: {:?} @ {} mm", back.dims(), back.spacing());
    Ok(())
}
