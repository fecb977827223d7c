//! Models from TOML spec files: load, price in both arithmetic modes,
//! write back.
//!
//! cargo run --example model_spec [path.toml]

use optstop::model::{build_from_spec, Model, ModelSpec};
use optstop::reward::digital_usc;
use optstop::scalar::Rational;
use optstop::snell::compute;
use optstop::stopping::exercise_region;

fn main() -> optstop::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/seven_node_model.toml").to_string());
    let text = std::fs::read_to_string(&path).map_err(|e| optstop::Error::Parse(e.to_string()))?;
    let spec = ModelSpec::from_toml_str(&text)?;

    let exact: Model<Rational> = build_from_spec(&spec)?;
    let phi = digital_usc(&exact, "4".parse().unwrap())?;
    let res = compute(&exact, &phi)?;
    let region: Vec<&str> = exercise_region(&res, &phi)?.into_iter().map(|id| exact.node(id).label()).collect();
    println!("rational: v(root) = {}, exercise region {:?}", res.root_value(), region);

    let float: Model<f64> = build_from_spec(&spec)?;
    let phi = digital_usc(&float, 4.0)?;
    println!("float:    v(root) = {}", compute(&float, &phi)?.root_value());

    println!("--- round trip ---\n{}", ModelSpec::from_model(&exact).to_toml_string()?);
    Ok(())
}
