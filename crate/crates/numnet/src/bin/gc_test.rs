fn main() {
    let t0 = std::time::Instant::now();
    let report = numnet::train::full_model_gradcheck(8, 2, 42, 200).unwrap();
    println!("{}", report.render());
    println!("elapsed: {:?}", t0.elapsed());
    std::process::exit(if report.passed() { 0 } else { 1 });
}
