// The bindings are plain Rust underneath; exercise them natively.
use sigwatch_web::Demo;

#[test]
fn series_window_and_pca_are_consistent() {
    let demo = Demo::new(4, 0.1, 1200, 600, 1200).unwrap_or_else(|_| panic!("demo"));
    let series: serde_json::Value = serde_json::from_str(&demo.series().ok().unwrap()).unwrap();
    assert_eq!(series["time"].as_array().unwrap().len(), 120);
    assert_eq!(series["detectors"], 18);
    let hacked = series["hacked"].as_array().unwrap();
    assert_eq!(hacked[59], 0);
    assert_eq!(hacked[60], 1);

    assert_eq!(demo.window_count(18), 120);
    let w = demo.window(18, 100).ok().unwrap();
    assert_eq!(w.len(), 18 * 23 + 1);
    assert_eq!(*w.last().unwrap(), 0.0);
    assert!(w[..18 * 23].iter().all(|v| (0.0..=1.0).contains(v)));

    let pca: serde_json::Value = serde_json::from_str(&demo.pca(18).ok().unwrap()).unwrap();
    assert_eq!(pca["x"].as_array().unwrap().len(), 120);
    assert!(pca["ratio"][0].as_f64().unwrap() >= pca["ratio"][1].as_f64().unwrap());
}
