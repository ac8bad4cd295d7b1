//! Plant a transposed repetition in a synthetic piece and find it again in
//! the self-similarity of transposition-invariant n-gram magnitudes.

use cae::basis::ComplexBasis;
use cae::data::{synth_cqt_like_with, PlantedRepeat, SynthOptions};
use cae::discovery::{discover, DiscoveryConfig};
use cae::model::CaeModel;

fn main() {
    let (ngram, bins) = (16, 48);
    let mut opts = SynthOptions::new(400, bins, 200);
    opts.margin_bins = 6;
    opts.plant = Some(PlantedRepeat { src_start: 30, dst_start: 260, len: 80, shift: -5 });
    let piece = synth_cqt_like_with(3, &opts).unwrap();

    let model = CaeModel::unstandardized(ComplexBasis::dft_along_bins(ngram, bins));
    let cfg = DiscoveryConfig { ngram, ..Default::default() };
    let found = discover(&piece, &model, &cfg).unwrap();
    println!("planted: frames 30..110 repeat at 260..340, 5 bins lower");
    for s in found.sections.iter().take(5) {
        println!(
            "found: n-grams {:?} repeat at {:?} (lag {}, score {:.3})",
            s.occurrence_a,
            s.occurrence_b,
            s.lag(),
            s.score
        );
    }
}
