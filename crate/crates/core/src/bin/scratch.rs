// Temporary experiment driver used while tuning; not part of the deliverable.
use lcmkit::datasets::{generate_splits, DatasetSpec, Family};
use lcmkit::ilcm::{train, IlcmModel, ModelVariant, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma).powi(2);
        db += (rb[i] - mb).powi(2);
    }
    num / (da.sqrt() * db.sqrt())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps_scale: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let spec = DatasetSpec {
        family: Family::Toy2d,
        n_train: 20_000,
        n_val: 2_000,
        n_test: 2_000,
        seed: 1,
    };
    let data = generate_splits(&spec).unwrap();
    println!("dataset ready: {} train pairs", data.train.len());

    let mut cfg = TrainConfig::toy2d_paper(seed);
    cfg.steps = cfg.steps.map(|s| ((s as f64 * steps_scale) as usize).max(1));
    println!("steps: {:?} (total {})", cfg.steps, cfg.total_steps());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = IlcmModel::new(
        2,
        2,
        &cfg.enc_hidden,
        &cfg.sol_hidden,
        cfg.sigma_x,
        ModelVariant::Ilcm,
        &mut rng,
    );

    let t0 = Instant::now();
    let out = train(&mut model, &data.train, &data.val, &cfg, 0).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "trained {} steps in {:.1}s ({:.1} steps/s), val_loss {:.4}",
        cfg.total_steps(),
        dt,
        cfg.total_steps() as f64 / dt,
        out.val_loss
    );
    for r in out.trace.iter().step_by(out.trace.len() / 20) {
        println!(
            "  step {:6} phase {} beta {:.2} lr {:.5} loss {:9.3} fullbeta {:9.3}",
            r.step, r.phase, r.beta, r.lr, r.loss, r.full_beta_loss
        );
    }
    println!("inferred order: {:?}", out.inferred_order);

    // Correlation of learned causal variables with truth on test pairs.
    let mut learned = vec![Vec::new(), Vec::new()];
    let mut truth = vec![Vec::new(), Vec::new()];
    for p in &data.test {
        let z_hat = model.latents_to_causal(&p.x);
        let t = p.truth.as_ref().unwrap();
        for k in 0..2 {
            learned[k].push(z_hat[k]);
            truth[k].push(t.z[k]);
        }
    }
    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        println!("spearman learned{} vs true{}: {:+.3}", a, b, spearman(&learned[a], &truth[b]));
    }

    // Intervention accuracy under both variable permutations.
    let mut correct_id = 0usize;
    let mut correct_swap = 0usize;
    for p in &data.test {
        let post = model.encode_intervention(&p.x, &p.x_post);
        let pred = post.argmax_target().as_atomic();
        let true_t = p.truth.as_ref().unwrap().target.as_atomic();
        if pred == true_t {
            correct_id += 1;
        }
        let swapped = pred.map(|i| 1 - i);
        if swapped == true_t {
            correct_swap += 1;
        }
    }
    let n = data.test.len() as f64;
    println!(
        "accuracy identity {:.3}, swap {:.3}",
        correct_id as f64 / n,
        correct_swap as f64 / n
    );
}
