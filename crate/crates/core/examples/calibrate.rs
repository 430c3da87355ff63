//! Dev-only calibration sweep for the desk-scale profile constants.

use std::collections::BTreeSet;
use std::time::Instant;

use forgetlab_core::data::make_synthetic;
use forgetlab_core::eval::{forgetting_capability, mia_auc};
use forgetlab_core::nn::SgdConfig;
use forgetlab_core::train::{plain_train, train_with_codes, TrainConfig};
use forgetlab_core::unlearn::forget;
use forgetlab_core::{generate_codebook, ClassPartition};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(9.0);
    let per_class: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1200);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(20);
    let active: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(784);

    let t0 = Instant::now();
    let (train, test) = if active == 784 {
        make_synthetic(10, per_class, 400, 784, spread, 1001).unwrap()
    } else {
        // Informative signal in `active` dims embedded into a 784-dim canvas.
        let (tr, te) = make_synthetic(10, per_class, 400, active, spread, 1001).unwrap();
        let embed = |d: &forgetlab_core::LabeledDataset| {
            let mut inputs = ndarray::Array2::zeros((d.len(), 784));
            inputs
                .slice_mut(ndarray::s![.., 0..active])
                .assign(d.inputs());
            forgetlab_core::LabeledDataset::new(
                inputs,
                d.labels().to_vec(),
                d.num_classes(),
                d.split(),
                d.norm(),
            )
            .unwrap()
        };
        (embed(&tr), embed(&te))
    };
    println!("dataset {}x{} in {:.1}s", train.len(), train.feature_dim(), t0.elapsed().as_secs_f64());

    let cb = generate_codebook(10, 784, 1, 1002).unwrap();
    let mk = |t_mix: f64| TrainConfig {
        hidden_dims: vec![256, 128],
        t_mix,
        epochs,
        batch_size: 128,
        sgd: SgdConfig::constant(0.01, 5e-4),
        seed: 7,
        excluded_classes: BTreeSet::new(),
    };

    let t1 = Instant::now();
    let (plain, _) = plain_train(&train, None, &mk(0.0)).unwrap();
    let acc_plain = plain.accuracy(test.inputs().view(), test.labels()).unwrap();
    println!("plain: acc {acc_plain:.2} in {:.1}s", t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    let (mixed, _) = train_with_codes(&train, None, &cb, &mk(0.1)).unwrap();
    let acc_mixed = mixed.accuracy(test.inputs().view(), test.labels()).unwrap();
    println!("mixed t=0.1: acc {acc_mixed:.2} in {:.1}s (drop {:.2})", t2.elapsed().as_secs_f64(), acc_plain - acc_mixed);

    let part = ClassPartition::single(0, 10).unwrap();
    {
        use forgetlab_core::unlearn::{compute_eta, fim_from_codebook, PerturbationPlan};
        let ff = fim_from_codebook(&mixed, &cb, part.forget()).unwrap();
        let fr = fim_from_codebook(&mixed, &cb, part.remain()).unwrap();
        let eta = compute_eta(&ff, &fr, 1e-12).unwrap();
        let plan = PerturbationPlan::build(&ff, &fr, 1e-3, 10.0).unwrap();
        let delta = plan.delta();
        for seg in mixed.params().segmentation().segments() {
            let sl = |v: &[f64]| (seg.offset, seg.offset + seg.len);
            let (a, b) = sl(&eta);
            let max_eta = eta[a..b].iter().cloned().fold(0.0f64, f64::max);
            let max_ff = ff.values()[a..b].iter().cloned().fold(0.0f64, f64::max);
            let max_fr = fr.values()[a..b].iter().cloned().fold(0.0f64, f64::max);
            let big = delta[a..b].iter().filter(|d| d.abs() > 0.01).count();
            println!(
                "  {}: max_ff {max_ff:.3e} max_fr {max_fr:.3e} max_eta {max_eta:.3e} alpha {:.3e} |delta|>0.01: {big}",
                seg.name, plan.alpha_per_layer()[&seg.name]
            );
        }
    }
    let before = forgetting_capability(&mixed, &test, &part).unwrap();
    let t3 = Instant::now();
    let (forgotten, rep) = forget(&mixed, &cb, &part, 1e-3, 10.0).unwrap();
    let after = forgetting_capability(&forgotten, &test, &part).unwrap();
    println!(
        "forget: {:.3}s sign {:?} scores +{:.1}/-{:.1} bp {}",
        t3.elapsed().as_secs_f64(),
        rep.chosen_sign,
        rep.code_score_plus,
        rep.code_score_minus,
        rep.backprop_count
    );
    println!(
        "before: A_R {:.2} E_F {:.2} | after: A_R {:.2} E_F {:.2} (drop {:.2})",
        before.a_r, before.e_f, after.a_r, after.e_f, before.a_r - after.a_r
    );
    let auc = mia_auc(&forgotten, &train, &test, 0).unwrap();
    println!("post-forget MIA AUC {auc:.3}");
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
