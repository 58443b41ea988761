//! Print the full default configuration; save it with
//! `cargo run --example config_defaults > experiment.toml`.

fn main() -> antispoof::Result<()> {
    print!("{}", antispoof::config::Config::default().to_toml()?);
    Ok(())
}
