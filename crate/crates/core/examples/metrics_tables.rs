//! Classification metrics from confusion matrices, including the reference
//! tables embedded in the crate.

use iis_core::frames::ActionLabel::{Listen, Speak, Wait};
use iis_core::metrics::{confusion, report, ORIENTATION, SVM_REFERENCE, TIMING_REFERENCE};

fn main() -> iis_core::Result<()> {
    let predicted = [Listen, Listen, Speak, Wait, Wait, Wait, Speak];
    let correct = [Listen, Speak, Speak, Wait, Wait, Listen, Speak];
    let cm = confusion(&predicted, &correct)?;
    println!("{ORIENTATION}\n{cm}\n{}", report(&cm));

    for (name, table) in [
        ("SVM", SVM_REFERENCE),
        ("timing classifier", TIMING_REFERENCE),
    ] {
        let r = report(&table);
        println!(
            "{name}: accuracy {:.2}%, macro F1 {:.4}, weighted precision {:.4}",
            100.0 * r.accuracy,
            r.macro_avg.f1,
            r.weighted_avg.precision
        );
    }
    println!("{}", serde_json::to_string(&report(&TIMING_REFERENCE))?);
    Ok(())
}
