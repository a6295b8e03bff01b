// Driving the command-line experiments from code and reading back the
// config echo.

use std::error::Error;

use qrrnum::cli::{run, Command, ExperimentConfig, ExperimentSpec, Format, Overrides};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let config = ExperimentConfig::from_toml(
        r#"
        [channels]
        pairs = [[0.2, 0.2], [0.1, 0.3], [0.15, 0.25]]

        [control]
        v_g = [20.0]

        [run]
        horizon = 100000
        seed = 11
        "#,
    )?;
    let out = std::env::temp_dir().join(format!("qrrnum-cli-example-{}", std::process::id()));

    for command in [Command::Region, Command::Simulate] {
        let spec = ExperimentSpec {
            command,
            config_path: None,
            out: out.join(command.as_str()),
            format: Format::Csv,
            overrides: Overrides::default(),
            config: config.clone(),
        };
        let outcome = run(&spec, false)?;
        for line in &outcome.report {
            println!("{}: {line}", command.as_str());
        }
        let echo = std::fs::read_to_string(spec.out.join("config_echo.toml"))?;
        assert_eq!(ExperimentSpec::from_toml(&echo)?, spec);
    }
    std::fs::remove_dir_all(&out)?;
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
