/** Tiny --flag value parser shared by the three bins. */

export function parseFlags(argv: string[], allowed: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) {
      throw new Error(`unexpected argument '${arg}'`);
    }
    const name = arg.slice(2);
    if (!allowed.includes(name)) {
      throw new Error(`unknown flag --${name}`);
    }
    const value = argv[++i];
    if (value === undefined) {
      throw new Error(`flag --${name} needs a value`);
    }
    flags.set(name, value);
  }
  return flags;
}

export function fail(message: string): never {
  console.error(message);
  process.exit(1);
}
