use curvesurvey::bands::build_band;
use curvesurvey::estimate::{true_covariance, FunctionalEstimate};
use curvesurvey::{BandKind, SamplingDesign, SyntheticSpec};

fn main() -> curvesurvey::Result<()> {
    let pop = SyntheticSpec {
        units: 500,
        grid_points: 32,
        strata: 1,
        seed: 7,
        amplitude_spread: 0.5,
        noise_smoothness: 1.0,
    }
    .generate()?;

    let design = SamplingDesign::srswor(pop.size(), 50)?;
    let sample = design.draw(1);

    let estimate = FunctionalEstimate::compute(&pop, &sample, true)?;
    let band = build_band(&estimate, 0.05, BandKind::Global)?;
    println!(
        "mean at t=0: {:.3} in [{:.3}, {:.3}]",
        estimate.mean()[0],
        band.lower()[0],
        band.upper()[0]
    );

    // How good could this design get? Exact, no sampling involved:
    let exact = true_covariance(&pop, &design, true)?;
    println!("integrated design variance: {:.5}", exact.integrated_variance());
    Ok(())
}
