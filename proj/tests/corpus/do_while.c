int retries;
int budget = 5;

int drain(void)
{
  int n = 0;
  do {
    n++;
    retries++;
  } while (retries < budget);
  while (budget > 0)
    budget--;
  return n;
}
