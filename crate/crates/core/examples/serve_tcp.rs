//! Streams a recording to the decision service over TCP and checks that the
//! replies match the offline decision log.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use iis_core::classifier::{ForestParams, MaxFeatures};
use iis_core::forecaster::TrainConfig;
use iis_core::pipeline::{run_recording, Alignment, Models};
use iis_core::serve::{
    frame_message, log_line_from_message, serve_listener, start_message, PayloadFormat, END_MESSAGE,
};
use iis_core::synthgen::Generator;
use iis_core::workflow::{fit_classifier, fit_forecaster, ClassifierSpec};

fn main() -> iis_core::Result<()> {
    let recordings = Generator::default().recordings(20, 4);
    let (train, live) = recordings.split_at(18);
    let config = TrainConfig {
        epochs: 3,
        hidden: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    let forecaster = fit_forecaster(train, 4, &config)?;
    let forest = ForestParams {
        n_estimators: 20,
        max_features: MaxFeatures::Sqrt,
        seed: 4,
        ..ForestParams::default()
    };
    let classifier = fit_classifier(train, &ClassifierSpec::Forest(forest))?;
    let models = Models::new(Arc::new(forecaster), Arc::new(classifier))?;

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server_models = models.clone();
    thread::spawn(move || serve_listener(listener, server_models));

    let recording = &live[0];
    let stream = TcpStream::connect(addr)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    writeln!(
        writer,
        "{}",
        start_message(&recording.session_id, PayloadFormat::Frame)
    )?;

    let offline = run_recording(&models, recording, Alignment::Current)?.decisions;
    let mut line = String::new();
    let mut matched = 0;
    for (frame, expected) in recording.frames.iter().zip(&offline) {
        writeln!(writer, "{}", frame_message(frame))?;
        line.clear();
        reader.read_line(&mut line)?;
        let reply = line.trim_end();
        if frame.frame_index < 12 {
            println!("{reply}");
        }
        if log_line_from_message(reply).as_deref() == Some(expected.log_line().as_str()) {
            matched += 1;
        }
    }
    writeln!(writer, "{END_MESSAGE}")?;
    line.clear();
    reader.read_line(&mut line)?;
    println!("{}", line.trim_end());
    println!(
        "{matched}/{} live decisions match the offline log",
        offline.len()
    );
    Ok(())
}
