use plpanel::basis::{build_design, BasisSpec};
use plpanel::estimator::{fit_unpenalized, LqaOptions};
use plpanel::path::{default_lambda_grid, fit_path};
use plpanel::sim::{gen_dgp, DgpConfig};
use plpanel::tuning::{default_inv_bandwidth_grid, select_bandwidth_degree};

fn main() {
    let cfg = DgpConfig { n: 200, t: 10, r: 1.0, seed: 2024, n_reps: 1 };
    for rep in 0..10u64 {
        let (d, _) = gen_dgp(&cfg, rep).unwrap();
        let (_, invh) = select_bandwidth_degree(&d, &[3], &default_inv_bandwidth_grid(d.nt()), 5, rep).unwrap();
        let m = invh[0];
        let specs: Vec<BasisSpec> = (0..4).map(|_| BasisSpec::uniform(3, m).unwrap()).collect();
        let design = build_design(&d, &specs).unwrap();
        let fit = fit_unpenalized(&design, d.y(), &[]).unwrap();
        let path = fit_path(&design, d.y(), &default_lambda_grid(), 3.7, &LqaOptions::default()).unwrap();
        let models: Vec<String> = path.models.iter().map(|mo| format!("{:?}", mo.linear_set)).collect();
        println!(
            "rep {rep}: M={m:2} norms={:?} path={}",
            fit.group_norms.iter().map(|g| (g * 100.0).round() / 100.0).collect::<Vec<_>>(),
            models.join(" ")
        );
    }
}
