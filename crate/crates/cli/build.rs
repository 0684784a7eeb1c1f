use std::process::Command;

// Bakes a git-describe style version into the binary, falling back to the
// crate version outside a checkout.
fn main() {
    let pkg = std::env::var("CARGO_PKG_VERSION").unwrap_or_default();
    let git = |args: &[&str]| {
        Command::new("git")
            .args(args)
            .output()
            .ok()
            .filter(|o| o.status.success())
            .and_then(|o| String::from_utf8(o.stdout).ok())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
    };
    let version = match git(&["describe", "--tags", "--dirty"]) {
        Some(tag) => tag,
        None => match git(&["describe", "--always", "--dirty"]) {
            Some(sha) => format!("v{pkg}-g{sha}"),
            None => format!("v{pkg}"),
        },
    };
    println!("cargo:rustc-env=RBMP_VERSION={version}");
    if let Some(dir) = git(&["rev-parse", "--git-dir"]) {
        println!("cargo:rerun-if-changed={dir}/HEAD");
        println!("cargo:rerun-if-changed={dir}/index");
    }
    println!("cargo:rerun-if-changed=build.rs");
}
