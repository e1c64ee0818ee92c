#![no_main]

use inbo::geometry::Polygon;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(polygon) = Polygon::from_csv_str(text) {
        let again = Polygon::from_csv_str(&polygon.to_csv_string()).expect("written boundary reparses");
        assert_eq!(again.to_csv_string(), polygon.to_csv_string());
    }
});
