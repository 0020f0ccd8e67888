//! Two-stage training on a generated domain-shift benchmark, compared with
//! training on either stage's data alone.

use minaret::encoder::{BiEncoder, EncoderConfig};
use minaret::retrieval::evaluate;
use minaret::synthetic::{DomainShift, DomainShiftConfig};
use minaret::training::{run_multistage, HyperParams, Stage};

fn stages(ds: &DomainShift, seed: u64) -> (Stage, Stage) {
    let general = Stage {
        name: "general".into(),
        datasets: vec![ds.general.clone()],
        hyperparams: HyperParams {
            epochs: 8,
            batch_size: 32,
            learning_rate: 0.05,
            seed,
            ..HyperParams::retrieval()
        },
    };
    let domain = Stage {
        name: "domain".into(),
        datasets: vec![ds.domain.clone()],
        hyperparams: HyperParams {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.02,
            seed,
            ..HyperParams::retrieval()
        },
    };
    (general, domain)
}

fn main() -> minaret::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let ds = DomainShift::generate(&DomainShiftConfig::default(), seed)?;
    let init = BiEncoder::init(ds.tokenizer.clone(), 32, EncoderConfig::default(), seed)?;
    let (general, domain) = stages(&ds, seed);

    let arms = [
        ("general only", vec![general.clone()]),
        ("domain only", vec![domain.clone()]),
        ("general then domain", vec![general, domain]),
    ];
    for (name, plan) in arms {
        let outcome = run_multistage(init.clone(), &plan)?;
        let report = evaluate(outcome.final_encoder(), &ds.corpus, &ds.evalset, &[10])?;
        println!("{name:<20} MRR@10 {:.3}", report.metric("MRR@10").unwrap());
    }
    Ok(())
}
