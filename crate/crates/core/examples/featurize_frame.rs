//! Turns one landmark frame into the fixed-width feature vector and shows
//! the visibility gate on body landmarks.

use iis_core::frames::{feature_kind, featurize, FeatureKind, FEATURE_LEN};
use iis_core::synthgen::generate_recording;

fn main() -> iis_core::Result<()> {
    let recording = generate_recording(3, None)?;
    let mut frame = recording.frames[20].clone();
    let v = featurize(&frame, 0.5)?;
    println!("{} features", v.as_slice().len());
    assert_eq!(v.as_slice().len(), FEATURE_LEN);
    println!(
        "body {} face {} hands {} blendshapes {}",
        v.body().len(),
        v.face().len(),
        v.hands().len(),
        v.blendshapes().len()
    );

    // A shoulder seen with low confidence is zeroed.
    frame.body[11].visibility = 0.2;
    let gated = featurize(&frame, 0.5)?;
    println!("left shoulder before {:?}", &v.body()[33..36]);
    println!("left shoulder gated  {:?}", &gated.body()[33..36]);

    let kinds = (0..FEATURE_LEN).fold([0usize; 4], |mut acc, i| {
        acc[match feature_kind(i) {
            FeatureKind::X => 0,
            FeatureKind::Y => 1,
            FeatureKind::Z => 2,
            FeatureKind::Blendshape => 3,
        }] += 1;
        acc
    });
    println!("x/y/z/blendshape counts {kinds:?}");
    Ok(())
}
