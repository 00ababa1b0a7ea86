int len;
int width;

int sum(int n, int values[len])
{
  int s = 0;
  int i;
  for (i = 0; i < n; i++)
    s += values[i] * width;
  return s;
}

int proto(int width, int cells[width]);
