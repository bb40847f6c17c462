//! Reactive capability of a saturated synchronous machine along its P range.

use adnflex::capability::{armature_limit, field_limit, CapabilityParams};

fn main() -> adnflex::Result<()> {
    let caps = CapabilityParams {
        s_n: 600.0,
        v_n: 1.0,
        e_lim: 2.2,
        x_l: 0.15,
        x_ad: 1.7,
        m: 0.1,
        n: 7.0,
        p_n: 510.0,
    };
    let v = 1.0;
    println!("   P MW   armature Mvar   field Mvar   K      iters");
    for i in 0..=10 {
        let p = caps.p_n * i as f64 / 10.0;
        let qa = armature_limit(&caps, p, v)?;
        let f = field_limit(&caps, p, v, qa)?;
        println!("{p:7.1}   {qa:12.1}   {:10.1}   {:.4} {:>3}", f.q_max, f.k, f.iterations);
    }
    Ok(())
}
