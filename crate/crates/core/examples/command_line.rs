//! Driving the `zstta` command line in-process: synth, train, run, inspect.

use zeroshot_tta::cli::main_with_args;
use zeroshot_tta::config::RunConfig;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    // A config file carries everything the flags do not.
    std::fs::write(p("config.json"), RunConfig::benchmark().to_json_pretty())?;
    let steps: [Vec<String>; 5] = [
        vec![
            "synth".into(),
            "--preset".into(),
            "shifted".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            p("data"),
        ],
        vec!["inspect".into(), p("data/manifest.json")],
        vec![
            "train".into(),
            "--config".into(),
            p("config.json"),
            "--dataset".into(),
            p("data/manifest.json"),
            "--out".into(),
            p("params"),
        ],
        vec![
            "run".into(),
            "--config".into(),
            p("config.json"),
            "--dataset".into(),
            p("data/manifest.json"),
            "--params".into(),
            p("params"),
            "--protocol".into(),
            "gzsl".into(),
            "--out".into(),
            p("gzsl"),
        ],
        vec!["inspect".into(), p("params/w_q.dpt")],
    ];
    for args in steps {
        println!("$ zstta {}", args.join(" "));
        let code = main_with_args(std::iter::once("zstta".to_string()).chain(args));
        assert_eq!(code, 0);
    }

    // Reusing a non-empty output directory is refused with exit code 3.
    let code = main_with_args(["zstta", "synth", "--preset", "easy", "--out", &p("data")]);
    println!("second synth into the same directory: exit {code}");
    assert_eq!(code, 3);

    let report = std::fs::read_to_string(p("gzsl/report.json"))?;
    println!("report.json starts with:\n{}", report.lines().take(8).collect::<Vec<_>>().join("\n"));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
