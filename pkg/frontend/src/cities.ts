// The service has no city-list endpoint, so the gallery's suggestions are
// whatever city prefixes this session has seen in pair image ids.
const seen = new Set<string>();

export function rememberCity(imageId: string): void {
  const slash = imageId.indexOf("/");
  if (slash > 0) {
    seen.add(imageId.slice(0, slash));
  }
}

export function knownCities(): string[] {
  return [...seen].sort();
}
