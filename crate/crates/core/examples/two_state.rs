//! Particle filter on the bundled two-state HMM against the forward
//! algorithm and the exact asymptotic variance.

use nalgebra::DMatrix;
use smc_core::engine::{run_filter, FilterConfig};
use smc_core::models::FiniteHmm;
use smc_core::variance::recursion_variances;
use smc_core::{Functional, RngStream, SelectionScheme};

fn main() -> smc_core::Result<()> {
    let (_, ys) = FiniteHmm::two_state(vec![]).simulate(10, &mut RngStream::data(1, 0));
    let hmm = FiniteHmm::two_state(ys);
    let phi = Functional::indicator("x=1", 2, 1);

    let cfg = FilterConfig::new(10_000, 10, SelectionScheme::Residual, 7);
    let trace = run_filter(&hmm.filter()?, &cfg, &[phi])?;
    let exact = hmm.filtering()?[10][1];

    let laws = hmm.chain()?.solve()?;
    let table = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let v = recursion_variances(&laws, &table, 10, SelectionScheme::Residual)?;

    println!("estimate {:.5}", trace.last().weighted[0][0]);
    println!("exact    {exact:.5}");
    println!("asymptotic sd / sqrt(H) {:.5}", (v.at(10).v[(0, 0)] / 10_000.0).sqrt());
    Ok(())
}
