use hedgesim::pricing::{bs_closed_form, pde_surface, ContractSpec, PdeGridConfig, PricingSurface};
use hedgesim::MarketModel;

#[test]
fn default_grid_delta_matches_closed_form() {
    let m = MarketModel::black_scholes(0.0, 100.0, 0.2).unwrap();
    let c = ContractSpec::call(100.0, 1.0).unwrap();
    let pde = pde_surface(&m, &c, &PdeGridConfig::default()).unwrap();
    let bs = bs_closed_form(&m, &c).unwrap();
    let mut worst = 0.0f64;
    for i in 0..=95 {
        let t = i as f64 * 0.01;
        for j in 0..=200 {
            let s = 50.0 * 4f64.powf(j as f64 / 200.0);
            let d = (pde.delta(t, s).unwrap() - bs.delta(t, s).unwrap()).abs();
            worst = worst.max(d);
        }
    }
    println!("max delta error {worst:e}");
    assert!(worst < 5e-4);
}
