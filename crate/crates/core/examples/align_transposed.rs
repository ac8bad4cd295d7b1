//! Align a piece with a transposed, slightly faster copy. Magnitude features
//! ignore the transposition; raw spectra do not.

use cae::alignment::{align_features, align_raw, evaluate_alignment, tempo_scale, AlignConfig, GroundTruthMap};
use cae::basis::ComplexBasis;
use cae::data::{synth_cqt_like_events, FeatureMatrix, SynthOptions};
use cae::model::CaeModel;
use cae::transforms::pitch_shift;

fn main() {
    let (ngram, bins, factor) = (8, 84, 1.1);
    let mut opts = SynthOptions::new(300, bins, 150);
    opts.bins_per_octave = 24;
    opts.margin_bins = 12;
    let (piece, onsets) = synth_cqt_like_events(21, &opts).unwrap();
    let hop = piece.frame_hop_seconds;
    let moved = FeatureMatrix::new(pitch_shift(piece.values.view(), 12).unwrap(), hop, "up an octave").unwrap();
    let moved = tempo_scale(&moved, factor).unwrap();
    let gt = GroundTruthMap::new(onsets.iter().map(|&t| (t as f64 * hop, t as f64 * hop / factor)).collect()).unwrap();

    let cfg = AlignConfig { ngram, ..Default::default() };
    let model = CaeModel::unstandardized(ComplexBasis::dft_along_bins(ngram, bins));
    for (name, path) in [
        ("magnitudes", align_features(&piece, &moved, &model, &cfg).unwrap()),
        ("raw spectra", align_raw(&piece, &moved, &cfg).unwrap()),
    ] {
        let r = evaluate_alignment(&path, hop, hop, &gt).unwrap();
        println!(
            "{name:>11}: median error {:.3}s, within 250 ms {:.1}%",
            r.median,
            r.rate_250ms * 100.0
        );
    }
}
