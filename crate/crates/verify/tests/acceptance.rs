use std::process::ExitCode;

fn main() -> ExitCode {
    let verdicts = circrnn_verify::run_all();
    for v in &verdicts {
        println!("{}", v.line());
    }
    let passed = verdicts.iter().filter(|v| v.passed).count();
    println!("acceptance: {passed}/{} criteria passed", verdicts.len());
    if passed == verdicts.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
