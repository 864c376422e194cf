//! Recording-level stratified split and sliding forecaster windows.

use iis_core::synthgen::Generator;
use iis_core::windows::{
    split_dataset, window_starts, WindowSet, WindowSource, INPUT_LEN, OUTPUT_LEN,
};

fn main() -> iis_core::Result<()> {
    let recordings = Generator::default().recordings(60, 11);
    let split = split_dataset(&recordings, 0.109, 11)?;
    print!("{split}");

    println!(
        "starts for a 20-frame recording: {:?}",
        window_starts(20, INPUT_LEN, OUTPUT_LEN, 1)
    );

    for stride in [1, 2, 5] {
        let windows = WindowSet::from_recordings(&split.train, INPUT_LEN, OUTPUT_LEN, stride)?;
        println!("stride {stride}: {} train windows", windows.len());
    }
    let windows = WindowSet::from_recordings(&split.test, INPUT_LEN, OUTPUT_LEN, 1)?;
    let (rec, start) = windows.locate(0);
    println!(
        "first test window: recording {rec} frames {start}..{} -> {}..{}, input {:?}",
        start + INPUT_LEN,
        start + INPUT_LEN,
        start + INPUT_LEN + OUTPUT_LEN,
        windows.input(0).dim()
    );
    Ok(())
}
