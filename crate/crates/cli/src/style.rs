use std::io::IsTerminal;

/// Bold title on an interactive terminal unless `PENSIEVE_NO_COLOR` is set.
pub fn title(text: &str) -> String {
    let plain = std::env::var_os("PENSIEVE_NO_COLOR").is_some() || !std::io::stdout().is_terminal();
    if plain {
        text.to_string()
    } else {
        format!("\x1b[1m{text}\x1b[0m")
    }
}
