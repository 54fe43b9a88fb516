// Placeholder main; subcommands are wired up once the runner module lands.
int main() { return 0; }
