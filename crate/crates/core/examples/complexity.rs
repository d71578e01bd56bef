//! Exact multiply counts of the SO(3) tensor product against the frame
//! rotation plus SO(2) linear that replaces it, with log-log slopes.

use so2frames::bench::{complexity, SLOPE_SIZES, SO2_TP_SIZES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let c = complexity(&SLOPE_SIZES, &SO2_TP_SIZES, 2)?;
    println!("{:>3} {:>12} {:>12}", "L", "so3 tp", "rot + so2");
    for (k, l) in c.so3_tp.sizes.iter().enumerate() {
        println!("{l:>3} {:>12} {:>12}", c.so3_tp.counts[k], c.rotation_so2_linear.counts[k]);
    }
    for s in [&c.so3_tp, &c.rotation_so2_linear, &c.so2_tp_paths, &c.so2_tp_multiplies] {
        println!("{:<22} slope {:.3}  (other offset {:.3})", s.kernel, s.slope, s.alt_slope);
    }
    Ok(())
}
