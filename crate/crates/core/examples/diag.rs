use biasvar_core::spectra;

fn main() {
    // MP-limit oracle check: alpha_p large, delta_phi tiny.
    let af = 0.25;
    let mp = spectra::mp_density(af, 1.0).unwrap();
    for (ap, dphi) in [(16.0, 1e-9), (64.0, 1e-9)] {
        let d = spectra::rnlfm_density(af, ap, dphi, 1.0, 1e-6).unwrap();
        let xs: Vec<f64> = (1..10).map(|i| mp.x_min + (mp.x_max - mp.x_min) * i as f64 / 10.0).collect();
        let rq = d.rho_grid(&xs).unwrap();
        let rm = mp.rho_grid(&xs).unwrap();
        let scale = ap / af;
        let max_rel: f64 = rq.iter().zip(&rm).map(|(q, m)| (q * scale - m).abs() / m).fold(0.0, f64::max);
        println!("ap={ap}: max rel dev of (ap/af)*rho_q vs rho_mp = {max_rel:.4e}; support {:?}", d.support.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>());
    }
    // mass at threshold with adaptive need check
    let relu = 1.0 - 2.0 / std::f64::consts::PI;
    let d = spectra::rnlfm_density(0.25, 1.0, relu, 1.0, 1e-6).unwrap();
    println!("threshold support: {:?}", d.support);
    println!("threshold mass: {:?}", d.total_mass());
}
