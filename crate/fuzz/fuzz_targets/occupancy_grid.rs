#![no_main]
use libfuzzer_sys::fuzz_target;
use twin_htp::geometry::OccupancyGrid;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = OccupancyGrid::from_bytes(data) {
        assert_eq!(OccupancyGrid::from_bytes(&g.to_bytes()).unwrap(), g);
    }
});
