int done;
int retry;

int work(int n)
{
again:
  if (n-- > 0) {
    retry++;
    goto again;
  }
  done = 1;
  return retry;
}

void other(void)
{
done:
  retry = 0;
}
