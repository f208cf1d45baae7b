//! Scenario and depth rasterization, and the binary grid format.

use caspian::data::{synthetic_dataset, SynthOracleParams};
use caspian::grid::{
    decode_inundation, encode_inundation, encode_inundation_bytes, encode_susceptibility, extract_depths,
};
use caspian::scenario::parse_scenario;

fn main() -> caspian::Result<()> {
    let ds = synthetic_dataset(4, 60, 24, 48, 8, &SynthOracleParams::default())?;
    let im = ds.index_map()?;

    let scenario = parse_scenario("1010")?;
    let x = encode_susceptibility(&scenario, &ds.locations, &im)?;
    for i in 0..x.h() {
        let row: String = (0..x.w())
            .map(|j| match x.grid.get(i, j) {
                1 => '+',
                -1 => '-',
                _ => '.',
            })
            .collect();
        println!("{row}");
    }

    let depths = &ds.samples[0].depths;
    let map = encode_inundation(depths, &im)?;
    let bytes = encode_inundation_bytes(&map, true);
    let back = decode_inundation(&bytes)?;
    assert_eq!(extract_depths(&back.depths, &im)?, *depths);
    println!("{} locations, {} bytes on the wire, round trip exact", depths.len(), bytes.len());
    Ok(())
}
