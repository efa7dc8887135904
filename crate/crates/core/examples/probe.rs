use std::time::Instant;
use zygmund::experiments::*;
use zygmund::kernels::*;
use zygmund::operators::ShiftForm;
use zygmund::weights::WeightFunction;

fn main() {
    let which: String = std::env::args().nth(1).unwrap_or_default();
    if which == "coeff" {
        let t0 = Instant::now();
        let nw = KernelSpec::nagel_wainger();
        let rep = run_shift_coeff_sweep(&nw, 6);
        for sw in &rep.sweeps {
            let vals: Vec<String> = sw.samples.iter().map(|s| format!("n={:?} norm={:.4}+-{:.1e}", s.n, s.normalized, s.normalized_err)).collect();
            println!("{:?}/{:?} axis{} mono={}: {}", sw.r1, sw.r23, sw.axis, sw.monotone, vals.join("  "));
        }
        println!("superZ fit: slope {:.4} target {:.2} pass {} pts {:?}", rep.super_zygmund.slope, rep.super_zygmund.target, rep.super_zygmund.pass, rep.super_zygmund.points);
        println!("elapsed {:?}", t0.elapsed());
    }
    if which == "bench" {
        for (l1,l2) in [(3u32,3u32),(4,4)] {
            let cfg = ExperimentConfig { seed: 7, l1, l2 };
            for form in [ShiftForm::Form1, ShiftForm::Form3] {
                for (w, label) in [
                    (WeightFunction::Flat, "flat"),
                    (WeightFunction::power(0.0, 0.5, 1.0), "pw:0,0.5,1"),
                    (WeightFunction::power(0.9, 1.8, 2.7), "pw:0.9,1.8,2.7"),
                ] {
                    let t0 = Instant::now();
                    let rep = run_weighted_shift_bench(&cfg, &w, label, form, 10.0);
                    println!("caps({l1},{l2}) {form:?} {label}: norms {:?} slope {:.4}   [{:?}]",
                        rep.norms.iter().map(|(k,n)| format!("{k}:{n:.4}")).collect::<Vec<_>>(), rep.fit.slope, t0.elapsed());
                }
            }
        }
    }
    if which == "max" {
        let cfg = ExperimentConfig { seed: 3, l1: 3, l2: 3 };
        for (w, label) in [
            (WeightFunction::Flat, "flat"),
            (WeightFunction::power(0.0, 0.5, 1.0), "pw:0,0.5,1"),
            (WeightFunction::power(0.9, 1.8, 2.7), "pw:0.9,1.8,2.7"),
        ] {
            let t0 = Instant::now();
            let rep = run_maximal_growth(&cfg, &w, label, 5, 20, 10.0);
            println!("{label}: ratios {:?} slope {:.4} envelope {} [{:?}]",
                rep.ratios.iter().map(|(k,r)| format!("{k}:{:.3}", 2f64.powf(*r))).collect::<Vec<_>>(),
                rep.fit.slope, rep.envelope_ok, t0.elapsed());
        }
    }
    if which == "cond" {
        let nw = KernelSpec::nagel_wainger();
        let plan = SamplePlan { samples: 10_000, seed: 1, ..Default::default() };
        for cond in [Condition::Size, Condition::Mixed1, Condition::Mixed23, Condition::Holder] {
            let t0 = Instant::now();
            let rep = check_condition(&nw, cond, &plan);
            println!("NW {cond:?}: sup {:.6} argmax {:?} [{:?}]", rep.sup_ratio, rep.argmax, t0.elapsed());
        }
        for t in [[1.0,1.0,1.0],[4.0,1.0,1.0],[1.0,1.0,16.0]] {
            let spec = KernelSpec::bump_product(t, 0.5);
            for cond in [Condition::RHan, Condition::C1a, Condition::C1j, Condition::C2b] {
                let t0 = Instant::now();
                let rep = check_condition(&spec, cond, &plan);
                println!("bump t={t:?} {cond:?}: sup {:.4} fail {} [{:?}]", rep.sup_ratio, rep.failures, t0.elapsed());
            }
        }
    }
    if which == "decomp" {
        let t0 = Instant::now();
        let nw = KernelSpec::nagel_wainger();
        let op = discretize(&nw, 3, 3, Truncation::none(), 1e-4).unwrap();
        println!("discretize: {:?} nonconv {}", t0.elapsed(), op.provenance.nonconverged_entries);
        let cfg = ExperimentConfig { seed: 1, l1: 3, l2: 3 };
        let t0 = Instant::now();
        let reports = decomposition_suite(&cfg, &[1,2,3,4,5], Some(&op));
        for (name, r) in reports {
            println!("{name}: rel err {:.3e} direct {:.4e}", r.relative_error, r.direct);
        }
        println!("decomp suite: {:?}", t0.elapsed());
    }
    if which == "conv" {
        let cfg = ExperimentConfig { seed: 1, l1: 3, l2: 3 };
        let t0 = Instant::now();
        let m = convolution_lower_bound_margin(&cfg);
        println!("margin {m:.3e} [{:?}]", t0.elapsed());
    }
}
