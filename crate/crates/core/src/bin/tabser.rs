fn main() {
    tabser::cli::main()
}
