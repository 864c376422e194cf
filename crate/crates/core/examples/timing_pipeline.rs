//! Per-frame timing classifier: forecast five frames ahead, classify each
//! forecast, vote, and hand speak/listen decisions to a downstream stub.

use std::sync::Arc;

use iis_core::classifier::SvmParams;
use iis_core::forecaster::TrainConfig;
use iis_core::metrics::report;
use iis_core::pipeline::{
    evaluate_recordings, run_recording, Alignment, Models, PipelineState, RecordingStub,
};
use iis_core::synthgen::Generator;
use iis_core::windows::split_dataset;
use iis_core::workflow::{fit_classifier, fit_forecaster, ClassifierSpec};

fn main() -> iis_core::Result<()> {
    let recordings = Generator::default().recordings(80, 9);
    let split = split_dataset(&recordings, 0.15, 9)?;
    let config = TrainConfig {
        epochs: 30,
        hidden: 128,
        seed: 9,
        ..TrainConfig::default()
    };
    let forecaster = fit_forecaster(&split.train, 2, &config)?;
    let classifier = fit_classifier(&split.train, &ClassifierSpec::Svm(SvmParams::default()))?;

    let stub = Arc::new(RecordingStub::default());
    let models = Models::new(Arc::new(forecaster), Arc::new(classifier))?.with_hook(stub.clone());

    // A visitor who does not greet first, so the robot should open.
    let recording = split
        .test
        .iter()
        .find(|r| r.metadata.get("greeter").map(String::as_str) == Some("false"))
        .unwrap_or(&split.test[0]);
    let labels = recording
        .labels
        .as_ref()
        .expect("synthetic recordings are labeled");
    let mut state = PipelineState::new(&recording.session_id, models.clone());
    for (frame, label) in recording.frames.iter().zip(labels).take(30) {
        let d = state.step_frame(frame)?;
        println!("{}  truth={label}", d.log_line());
    }
    for (session, i, handoff) in stub.calls().iter().take(5) {
        println!("handoff {session} frame {i}: {handoff:?}");
    }

    let (cm, _) = evaluate_recordings(&models, &split.test, Alignment::Current)?;
    println!(
        "{} test recordings\n{cm}\n{}",
        split.test.len(),
        report(&cm)
    );

    for alignment in [Alignment::Current, Alignment::ForecastTarget] {
        let run = run_recording(&models, recording, alignment)?;
        let cm = run.confusion.expect("labeled recording");
        println!(
            "{alignment:?}: {} decisions, {} scored, {} correct",
            run.decisions.len(),
            cm.total(),
            cm.trace()
        );
    }
    Ok(())
}
