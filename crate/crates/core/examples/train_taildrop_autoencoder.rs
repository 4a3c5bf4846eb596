//! Train a teacher and a taildrop autoencoder on the synthetic dataset,
//! then score the teacher on reconstructions from the first K channels.
//!
//! Takes a few minutes.
//!
//! cargo run --release --example train_taildrop_autoencoder

use pnc::eval::{generate_synthetic_dataset, Dataset, Split, SyntheticConfig};
use pnc::train::{train_autoencoder, train_teacher, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = SyntheticConfig::default();
    let ds = generate_synthetic_dataset(&data, 1)?;
    let (train, test) = (ds.split(Split::TrainAe), ds.split(Split::Test));
    let (x, y) = (ds.tensor(&train), Dataset::labels(&train));
    let (x_test, y_test) = (ds.tensor(&test), Dataset::labels(&test));

    let cfg = TrainConfig::desk_scale();
    let (teacher, report) = train_teacher(&x, &y, data.n_classes, &cfg.teacher, 1)?;
    println!(
        "teacher: {} epochs, train accuracy {:.3}, test accuracy {:.3}",
        report.epochs,
        report.train_accuracy,
        teacher.accuracy(&x_test, &y_test)?
    );

    let trained = train_autoencoder(&x, &cfg, Some(&teacher))?;
    for s in &trained.stats {
        println!(
            "{:<8} epoch {}  loss {:.4}",
            s.stage.to_string(),
            s.epoch,
            s.mean_loss
        );
    }
    for k in 1..=cfg.taildrop.channels {
        let recon = trained.ae.forward(&x_test, Some(k))?;
        println!(
            "K={k}  teacher accuracy on reconstruction {:.3}",
            teacher.accuracy(&recon, &y_test)?
        );
    }
    Ok(())
}
