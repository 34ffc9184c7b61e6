//! Command-line entry point (under construction).

pub fn run() -> i32 {
    eprintln!("not yet wired");
    1
}
